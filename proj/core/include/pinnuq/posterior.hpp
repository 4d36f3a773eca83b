#pragma once

// Log-densities and training objectives.
//
// Additive normalization constants of Gaussian log-densities are dropped
// throughout: log_prior(0) == 0 and every likelihood is 0 at a perfect fit.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pinnuq/autodiff.hpp"
#include "pinnuq/network.hpp"
#include "pinnuq/physics.hpp"

namespace pinnuq {

/// One observed network output at every observation point.
struct ObservedComponent {
  std::size_t output = 0;   // network output index
  std::string name;
  Eigen::VectorXd values;
};

/// Measurement points and observed values.  Components with outputs
/// {U, V} (output 0 for Van der Pol) form the velocity group, {fx, fy}
/// the Reynolds-force group.  Pressure is never observed.
struct ObservationSet {
  PointSet points;
  std::vector<ObservedComponent> components;

  std::size_t size() const { return static_cast<std::size_t>(points.cols()); }
  const ObservedComponent* find(std::size_t output) const;
  /// Throws if component lengths differ from the point count, or a RANS set
  /// carries a pressure component.
  void validate(const Problem& problem) const;
};

struct TemperedPosteriorSpec {
  double sigma_prior = 2.0;
  double sigma_u = 0.05;
  double sigma_v = 0.05;
  double sigma_fx = 0.05;
  double sigma_fy = 0.05;
  double sigma_pde = 0.3;
  double beta_d = 0.70;
  double beta_f = 0.60;
  double beta_r = 0.50;

  /// All exponents 1: the tempered posterior reduces to the plain sum form.
  static TemperedPosteriorSpec untempered(double sigma_prior, double sigma_data, double sigma_pde);

  double sigma_for_output(std::size_t output) const;
  void validate() const;
};

enum class RepulsionVariant { kParameterSpace, kFunctionSpace };

struct RepulsionSpec {
  RepulsionVariant variant = RepulsionVariant::kFunctionSpace;
  double bandwidth = 1.0;     // sigma_theta or sigma_f
  double lambda_rep = 1.0;
  PointSet points;            // function-space evaluation points
};

// ---------------------------------------------------------------------------
// Log-densities

double log_prior(ParamView params, double sigma_prior);

double log_lik_velocity(const NetworkSpec& net, ParamView params, const ObservationSet& obs, double sigma_u,
                        double sigma_v);
double log_lik_reynolds(const NetworkSpec& net, ParamView params, const ObservationSet& obs, double sigma_fx,
                        double sigma_fy);
/// -1/(2 sigma^2) * sum_j |r(x_j)|^2.  Non-finite residuals throw with the point index.
double log_lik_pde(const NetworkSpec& net, ParamView params, const PointSet& collocation, double sigma_pde,
                   const Problem& problem);

double tempered_log_posterior(const TemperedPosteriorSpec& spec, const NetworkSpec& net, ParamView params,
                              const ObservationSet& obs, const PointSet& collocation, const Problem& problem);

/// Mean squared data misfit (summed over observed components) plus
/// lambda_pde times the mean squared residual (summed over components).
double pinn_loss(const NetworkSpec& net, ParamView params, const ObservationSet& obs, const PointSet& collocation,
                 double lambda_pde, const Problem& problem);

// ---------------------------------------------------------------------------
// Repulsion

double repulsion_parameter_space(const std::vector<ParamVector>& members, double sigma_theta);
/// Outputs compared with the Euclidean norm over all network outputs.
double repulsion_function_space(const NetworkSpec& net, const std::vector<ParamVector>& members,
                                const PointSet& points, double sigma_f);
/// Function-space kernel sum from precomputed member outputs (each K x N).
double repulsion_function_space(const std::vector<Eigen::MatrixXd>& outputs, double sigma_f);

/// Median of the pairwise squared distances (median heuristic).
double median_sq_distance(const std::vector<ParamVector>& members);
double median_sq_distance(const std::vector<Eigen::MatrixXd>& outputs);

double ensemble_objective(std::size_t member, const NetworkSpec& net, const std::vector<ParamVector>& members,
                          const ObservationSet& obs, const PointSet& collocation, const RepulsionSpec& rep,
                          double lambda_pde, const Problem& problem);

// ---------------------------------------------------------------------------
// Taped versions: each adds `scale * term` to the tape (seeding adjoints)
// and returns the unscaled term.

double log_prior_taped(GradientTape& tape, ParamView params, double sigma_prior, double scale,
                       std::size_t param_offset = 0);

/// Tempered data term N^beta * mean_i log-lik_i for the given group
/// (beta = 1: the plain sum).  Returns 0 when the group is not observed.
enum class DataGroup { kVelocity, kReynolds };
double data_log_lik_taped(GradientTape& tape, const NetworkSpec& net, ParamView params, const ObservationSet& obs,
                          DataGroup group, const TemperedPosteriorSpec& spec, double scale);

/// N_total^beta_r * mean over `points` of the per-point physics log-lik;
/// with `points` a subsample this is the scaled subsample estimate.
double physics_log_lik_taped(GradientTape& tape, const NetworkSpec& net, ParamView params, const PointSet& points,
                             std::size_t n_total, const TemperedPosteriorSpec& spec, const Problem& problem,
                             double scale);

/// Data MSE and residual MSE of the PINN loss.  An empty observation set
/// contributes no data term; an empty collocation set is allowed only with
/// lambda_pde == 0.
struct PinnLossParts {
  double data = 0.0;
  double pde = 0.0;
};
PinnLossParts pinn_loss_taped(GradientTape& tape, const NetworkSpec& net, ParamView params,
                              const ObservationSet& obs, const PointSet& collocation, double lambda_pde,
                              const Problem& problem, const DropoutMasks* data_masks = nullptr,
                              const DropoutMasks* pde_masks = nullptr);

/// Gradient of the parameter-space repulsion with respect to member i, the
/// other members held fixed.
Eigen::VectorXd repulsion_parameter_space_gradient(std::size_t member, const std::vector<ParamVector>& members,
                                                   double sigma_theta);

/// Adds scale * repulsion to member `member`'s tape through its outputs at
/// the repulsion points; the other members' outputs are constants.
double repulsion_function_space_taped(GradientTape& tape, std::size_t member, const NetworkSpec& net,
                                      ParamView params, const std::vector<Eigen::MatrixXd>& snapshot_outputs,
                                      const PointSet& points, double sigma_f, double scale);

}  // namespace pinnuq
