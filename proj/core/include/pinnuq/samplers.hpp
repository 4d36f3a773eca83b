#pragma once
// Hamiltonian Monte Carlo samplers over flat parameter vectors.
//
// Kinetic energy K(p) = p^T M^{-1} p / 2 with a diagonal mass matrix M.
// Targets are handed in as a function returning log p and its gradient.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pinnuq/autodiff.hpp"
#include "pinnuq/network.hpp"
#include "pinnuq/physics.hpp"
#include "pinnuq/posterior.hpp"

namespace pinnuq {

/// log p(theta) and d log p / d theta.
using LogDensityFn = std::function<LossAndGradient(ParamView)>;

struct LeapfrogResult {
  Eigen::VectorXd position;
  Eigen::VectorXd momentum;
  double logp = 0.0;
  Eigen::VectorXd grad;
  bool divergent = false;   // a non-finite value or gradient was hit; integration stopped there
};

/// Kick-drift-kick integration.  An empty mass_diag means the identity.
LeapfrogResult leapfrog(const LogDensityFn& target, const Eigen::VectorXd& position, const Eigen::VectorXd& momentum,
                        double step_size, std::size_t n_steps, const Eigen::VectorXd& mass_diag = {});

struct SamplerDiagnostics {
  double acceptance_rate = 0.0;          // mean acceptance statistic after warmup
  double warmup_acceptance_rate = 0.0;
  std::vector<double> step_size_trace;   // step size used at each iteration, warmup included
  double step_size = 0.0;                // step size used after warmup
  std::size_t divergences = 0;           // post-warmup
  std::size_t warmup_divergences = 0;
  bool divergence_warning = false;       // more than a quarter of the post-warmup draws diverged
  std::vector<std::size_t> n_leapfrog;   // per post-warmup iteration
  std::vector<std::size_t> tree_depth;   // NUTS only, per post-warmup iteration
  Eigen::VectorXd mass_diag;             // metric at the end of warmup (empty: identity)
  std::string sampler;
};

struct PosteriorSamples {
  Eigen::MatrixXd samples;   // S x P
  SamplerDiagnostics diagnostics;

  std::size_t size() const { return static_cast<std::size_t>(samples.rows()); }
  ParamVector row(std::size_t s) const { return samples.row(static_cast<Eigen::Index>(s)).transpose(); }
};

struct HmcConfig {
  double step_size = 0.01;
  std::size_t n_leapfrog = 50;
  std::size_t burn_in = 1000;
  std::size_t n_samples = 1000;
  /// Dual-averaging step-size adaptation during burn-in (fixed step when false).
  bool adapt_step_size = false;
  double target_accept = 0.65;
  /// Throw when no proposal is accepted during burn-in.
  bool abort_on_zero_acceptance = true;
  Eigen::VectorXd mass_diag;   // empty: identity

  void validate() const;
};

PosteriorSamples hmc_sample(const LogDensityFn& target, const ParamVector& init, const HmcConfig& config,
                            std::uint64_t seed);

struct NutsConfig {
  std::size_t max_tree_depth = 6;
  double target_accept = 0.65;
  std::size_t warmup = 500;
  std::size_t n_samples = 500;
  bool adapt_mass = true;
  /// Warmup split: step size only for the first fraction, then one metric
  /// window, then step size only for the last fraction.
  double init_buffer_fraction = 0.15;
  double term_buffer_fraction = 0.30;
  /// Initial step size; 0 runs the doubling heuristic from the initial point.
  double initial_step_size = 0.0;
  double max_energy_error = 1000.0;
  /// Keep each post-warmup trajectory (for structural checks).
  bool record_trees = false;

  void validate() const;
};

/// One NUTS trajectory: leapfrog states left to right, the initial state
/// included.  Momenta are stored as taken at each position.
struct TrajectoryRecord {
  std::vector<Eigen::VectorXd> positions;
  std::vector<Eigen::VectorXd> momenta;
  Eigen::VectorXd inv_mass;
  std::size_t depth = 0;
  bool u_turn = false;
  bool divergent = false;
};

struct NutsResult {
  PosteriorSamples samples;
  std::vector<TrajectoryRecord> trees;   // empty unless record_trees
};

NutsResult nuts_sample_recorded(const LogDensityFn& target, const ParamVector& init, const NutsConfig& config,
                                std::uint64_t seed);

PosteriorSamples nuts_sample(const LogDensityFn& target, const ParamVector& init, const NutsConfig& config,
                             std::uint64_t seed);

/// Generalized no-U-turn condition: true when the trajectory segment with
/// summed momentum rho and end momenta p_minus, p_plus should stop.
bool no_u_turn_stop(const Eigen::VectorXd& rho, const Eigen::VectorXd& p_minus, const Eigen::VectorXd& p_plus,
                    const Eigen::VectorXd& inv_mass);

/// Step-size heuristic: doubles or halves from `initial` until a single
/// leapfrog step crosses an acceptance of 1/2.
double find_reasonable_step_size(const LogDensityFn& target, const ParamVector& theta, double initial,
                                 const Eigen::VectorXd& mass_diag, std::uint64_t seed);

/// Nesterov dual averaging on log step size.
class DualAveraging {
 public:
  DualAveraging(double step_size, double target_accept);
  /// Restarts around a new step size (mu = log(10 eps)).
  void restart(double step_size);
  /// Feeds one acceptance statistic; returns the next step size.
  double update(double accept_stat);
  double final_step_size() const;

 private:
  double mu_ = 0.0;
  double target_ = 0.65;
  double h_bar_ = 0.0;
  double log_eps_ = 0.0;
  double log_eps_bar_ = 0.0;
  std::size_t t_ = 0;
};

/// Effective sample size of one chain (Geyer's initial monotone sequence
/// estimator on the sample autocorrelations).
double effective_sample_size(const Eigen::VectorXd& chain);

/// Monte-Carlo standard error of the chain mean: sd / sqrt(ESS).
double mcse_mean(const Eigen::VectorXd& chain);

// ---------------------------------------------------------------------------
// Collocation subsampling

/// `size` distinct columns of `collocation`, drawn uniformly with the given seed.
PointSet draw_collocation_subsample(const PointSet& collocation, std::size_t size, std::uint64_t seed);

/// Tempered physics log-likelihood of a fixed subsample, weighted as if it
/// were the full set: N_c^beta_r times the subsample mean (beta_r = 1 gives
/// N_c / n times the subsample sum).
double subsampled_physics_logp(const TemperedPosteriorSpec& spec, const NetworkSpec& net, ParamView params,
                               const PointSet& collocation, std::size_t subsample_size, std::uint64_t seed,
                               const Problem& problem);

/// Tempered log-posterior with the physics term on `subsample` standing in
/// for `n_collocation` points.
LogDensityFn tempered_posterior_target(const NetworkSpec& net, const ObservationSet& obs, PointSet subsample,
                                       std::size_t n_collocation, const TemperedPosteriorSpec& spec,
                                       const Problem& problem);

// ---------------------------------------------------------------------------
// Persistence: binary matrix (magic "PNUQSMP1", u64 rows, u64 cols, doubles
// row-major, little endian) plus a JSON sidecar "<path>.json".

void save_samples(const std::string& path, const PosteriorSamples& samples);
PosteriorSamples load_samples(const std::string& path);

}  // namespace pinnuq
