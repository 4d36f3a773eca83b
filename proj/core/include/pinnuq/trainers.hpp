#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pinnuq/autodiff.hpp"
#include "pinnuq/network.hpp"
#include "pinnuq/physics.hpp"
#include "pinnuq/posterior.hpp"

namespace pinnuq {

// ---------------------------------------------------------------------------
// First-order optimizers and schedules

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))), v(m) {}
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step in place.  weight_decay > 0 applies the
/// decoupled (AdamW) decay theta -= lr * decay * theta before the moment
/// update.
void adam_step(AdamState& state, ParamVector& params, const Eigen::VectorXd& grad, double lr, double weight_decay,
               const AdamHyper& hyper = {});

/// 0.5 * (1 - cos(pi t / T_w)) on [0, T_w], 1 after.  T_w == 0 gives 1.
double cosine_ramp(double t, double window);

/// lr0 * 0.5 * (1 + cos(pi * step / total)), reaching 0 at step == total.
double cosine_decay(double lr0, std::size_t step, std::size_t total);

// ---------------------------------------------------------------------------
// L-BFGS

using ValueGradientFn = std::function<LossAndGradient(ParamView)>;

struct LbfgsOptions {
  std::size_t max_iters = 5000;
  std::size_t memory = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  double grad_tol = 1e-10;          // stop when ||g||_2 falls below
  std::size_t max_line_search = 30; // function evaluations per line search
};

struct LbfgsResult {
  ParamVector params;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;       // accepted steps
  std::size_t evaluations = 0;
  bool converged = false;
  bool line_search_failed = false;
  std::vector<double> history;      // value after each accepted step, starting value first
};

LbfgsResult lbfgs_minimize(const ValueGradientFn& fn, ParamVector init, const LbfgsOptions& options = {});

/// One row of a training loss history.
struct LossRecord {
  std::string stage;
  std::size_t iteration = 0;
  double loss = 0.0;
  double data = 0.0;
  double physics = 0.0;
  double ramp = 0.0;
  double repulsion = 0.0;
};

void save_loss_history(const std::string& path, const std::vector<LossRecord>& history);

// ---------------------------------------------------------------------------
// MAP pre-training

struct StagePlan {
  std::size_t stage_a_iters = 5000;
  std::size_t stage_b_iters = 10000;
  std::size_t stage_c_iters = 5000;
  std::size_t ramp_window = 5000;
  std::size_t pde_minibatch = 2000;
  double lr_a = 1e-3;
  double lr_b = 1e-3;
  bool cosine_decay_b = true;
  std::size_t lbfgs_memory = 10;
  std::size_t history_stride = 50;

  void validate() const;
};

struct MapResult {
  ParamVector params;
  std::vector<LossRecord> history;
  bool lbfgs_line_search_failed = false;
  std::size_t lbfgs_iterations = 0;
  std::size_t lbfgs_evaluations = 0;
  double final_neg_log_posterior = 0.0;
};

/// Negative tempered log-posterior restricted to prior and data terms
/// (Stage A), and its ramped extension used in Stage B.
LossAndGradient map_stage_objective(const NetworkSpec& net, ParamView params, const ObservationSet& obs,
                                    const PointSet& minibatch, std::size_t n_collocation,
                                    const TemperedPosteriorSpec& spec, const Problem& problem, double physics_weight);

MapResult run_map_pretraining(const NetworkSpec& net, ParamVector init, const ObservationSet& obs,
                              const PointSet& collocation, const TemperedPosteriorSpec& spec,
                              const Problem& problem, const StagePlan& plan, std::uint64_t seed);

/// Value and gradient of the full tempered negative log-posterior.
LossAndGradient neg_log_posterior(const NetworkSpec& net, ParamView params, const ObservationSet& obs,
                                  const PointSet& collocation, const TemperedPosteriorSpec& spec,
                                  const Problem& problem);

// ---------------------------------------------------------------------------
// PINN-loss training (ensembles, MC dropout)

struct PinnTrainConfig {
  std::size_t epochs = 1000;
  double lr = 1e-4;
  double weight_decay = 0.0;
  bool cosine_decay = true;
  double lambda_pde = 1.0;
  /// Physics ramp window as a fraction of the epochs.
  double ramp_fraction = 0.5;
  /// Residual mini-batch size; 0 uses the whole collocation set every step.
  std::size_t pde_minibatch = 0;
  std::size_t history_stride = 100;

  void validate() const;
};

struct EnsembleConfig {
  PinnTrainConfig train;
  std::size_t members = 10;
  RepulsionVariant variant = RepulsionVariant::kFunctionSpace;
  double lambda_rep = 1.0;
  /// Fixed kernel bandwidth; unset uses the median heuristic, re-estimated
  /// every step until `bandwidth_warmup_fraction` of the epochs, then frozen.
  std::optional<double> bandwidth;
  double bandwidth_warmup_fraction = 0.1;
  PointSet repulsion_points;  // function-space variant only

  void validate() const;
};

struct EnsembleResult {
  std::vector<ParamVector> members;
  std::vector<LossRecord> history;   // ensemble-averaged losses
  double bandwidth = 0.0;            // final kernel bandwidth (0 when lambda_rep == 0)
  std::vector<std::size_t> restarts; // member indices restarted after divergence
};

/// Members start from init_params(net, derive_seed(seed, m)).  Each step every
/// member's gradient is taken against the same snapshot of all members; the
/// updates are applied afterwards.  lambda_rep == 0 trains the members exactly
/// as M independent train_pinn runs.
EnsembleResult train_repulsive_ensemble(const NetworkSpec& net, const ObservationSet& obs,
                                        const PointSet& collocation, const Problem& problem,
                                        const EnsembleConfig& config, std::uint64_t seed);

struct PinnTrainResult {
  ParamVector params;
  std::vector<LossRecord> history;
};

/// Single deterministic PINN training run (the M = 1, lambda_rep = 0 case).
PinnTrainResult train_pinn(const NetworkSpec& net, ParamVector init, const ObservationSet& obs,
                           const PointSet& collocation, const Problem& problem, const PinnTrainConfig& config,
                           std::uint64_t seed);

/// PINN loss with fresh dropout masks every step.
PinnTrainResult train_mc_dropout(const NetworkSpec& net, ParamVector init, const ObservationSet& obs,
                                 const PointSet& collocation, const Problem& problem, const PinnTrainConfig& config,
                                 std::uint64_t seed);

}  // namespace pinnuq
