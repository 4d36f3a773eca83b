#include "pinnuq/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "pinnuq/error.hpp"
#include "pinnuq/rng.hpp"
#include "pinnuq/text.hpp"

namespace pinnuq {

namespace {

Error stage_error(const std::string& what, const std::string& stage, std::size_t iteration) {
  Error e(ErrorKind::kNumeric, what + " in " + stage + " at iteration " + std::to_string(iteration));
  e.stage = stage;
  e.iteration = iteration;
  return e;
}

/// Uniform subsample without replacement (partial Fisher-Yates); the whole
/// set when it is not larger than `size`.
PointSet draw_minibatch(const PointSet& points, std::size_t size, Rng& rng) {
  const auto n = static_cast<std::size_t>(points.cols());
  if (size == 0 || size >= n) return points;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  PointSet out(points.rows(), static_cast<Eigen::Index>(size));
  for (std::size_t i = 0; i < size; ++i) out.col(static_cast<Eigen::Index>(i)) = points.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void adam_step(AdamState& state, ParamVector& params, const Eigen::VectorXd& grad, double lr, double weight_decay,
               const AdamHyper& h) {
  if (grad.size() != params.size()) throw dimension_error("gradient and parameter lengths differ");
  if (state.m.size() != params.size()) state = AdamState(static_cast<std::size_t>(params.size()));
  if (!grad.allFinite()) throw Error(ErrorKind::kNonFinite, "non-finite gradient passed to Adam");
  if (weight_decay < 0.0) throw invalid_argument("weight decay must be non-negative");
  ++state.step;
  if (weight_decay > 0.0) params *= 1.0 - lr * weight_decay;
  state.m = h.beta1 * state.m + (1.0 - h.beta1) * grad;
  state.v = h.beta2 * state.v + (1.0 - h.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + h.eps);
}

double cosine_ramp(double t, double window) {
  if (window <= 0.0 || t >= window) return 1.0;
  if (t <= 0.0) return 0.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * t / window));
}

double cosine_decay(double lr0, std::size_t step, std::size_t total) {
  if (total == 0) return lr0;
  if (step >= total) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

// ---------------------------------------------------------------------------
// L-BFGS with a strong Wolfe line search (bracketing + zoom with cubic
// interpolation).

namespace {

struct Probe {
  double alpha = 0.0;
  double f = 0.0;
  double dphi = 0.0;
  Eigen::VectorXd g;
};

/// Minimizer of the cubic through (a, fa, da) and (b, fb, db), safeguarded
/// to the interior of the bracket.
double cubic_step(const Probe& lo, const Probe& hi) {
  const double a = lo.alpha, b = hi.alpha;
  const double d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a - b);
  const double disc = d1 * d1 - lo.dphi * hi.dphi;
  double t = 0.5 * (a + b);
  if (disc >= 0.0 && std::isfinite(hi.f)) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = hi.dphi - lo.dphi + 2.0 * d2;
    if (denom != 0.0) t = b - (b - a) * (hi.dphi + d2 - d1) / denom;
  }
  const double left = std::min(a, b), right = std::max(a, b), w = right - left;
  if (!std::isfinite(t) || t < left + 0.1 * w || t > right - 0.1 * w) t = 0.5 * (a + b);
  return t;
}

struct LineSearch {
  const ValueGradientFn& fn;
  const ParamVector& x;
  const Eigen::VectorXd& d;
  double f0;
  double dphi0;
  const LbfgsOptions& opt;
  std::size_t evals = 0;

  Probe eval(double alpha) {
    ++evals;
    Probe p;
    p.alpha = alpha;
    try {
      LossAndGradient lg = fn(x + alpha * d);
      p.f = lg.value;
      p.g = std::move(lg.gradient);
      p.dphi = p.g.dot(d);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNonFinite) throw;
      p.f = std::numeric_limits<double>::infinity();
      p.dphi = std::numeric_limits<double>::quiet_NaN();
    }
    return p;
  }

  bool armijo(const Probe& p) const { return std::isfinite(p.f) && p.f <= f0 + opt.c1 * p.alpha * dphi0; }
  bool curvature(const Probe& p) const { return std::abs(p.dphi) <= -opt.c2 * dphi0; }

  std::optional<Probe> zoom(Probe lo, Probe hi) {
    while (evals < opt.max_line_search) {
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) break;
      Probe p = eval(cubic_step(lo, hi));
      if (!armijo(p) || p.f >= lo.f) {
        hi = std::move(p);
      } else {
        if (curvature(p)) return p;
        if (p.dphi * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = std::move(p);
      }
    }
    return std::nullopt;
  }

  std::optional<Probe> run(double alpha) {
    Probe prev;
    prev.alpha = 0.0;
    prev.f = f0;
    prev.dphi = dphi0;
    for (std::size_t i = 0; evals < opt.max_line_search; ++i) {
      Probe p = eval(alpha);
      if (!std::isfinite(p.f)) {
        // Overshot into a non-finite region: treat as a too-long step.
        if (!std::isfinite(p.f) && i > 0) return zoom(std::move(prev), std::move(p));
        alpha *= 0.1;
        continue;
      }
      if (!armijo(p) || (i > 0 && p.f >= prev.f)) return zoom(std::move(prev), std::move(p));
      if (curvature(p)) return p;
      if (p.dphi >= 0.0) return zoom(std::move(p), std::move(prev));
      prev = std::move(p);
      alpha *= 2.0;
    }
    return std::nullopt;
  }
};

}  // namespace

LbfgsResult lbfgs_minimize(const ValueGradientFn& fn, ParamVector init, const LbfgsOptions& opt) {
  if (opt.memory == 0) throw invalid_argument("L-BFGS memory must be positive");
  if (!(opt.c1 > 0.0 && opt.c1 < opt.c2 && opt.c2 < 1.0)) throw invalid_argument("need 0 < c1 < c2 < 1");
  LbfgsResult res;
  res.params = std::move(init);
  LossAndGradient cur = fn(res.params);
  res.evaluations = 1;
  if (!std::isfinite(cur.value) || !cur.gradient.allFinite()) {
    throw Error(ErrorKind::kNonFinite, "L-BFGS start point has a non-finite loss or gradient");
  }
  res.value = cur.value;
  res.history.push_back(cur.value);

  std::vector<Eigen::VectorXd> s_hist, y_hist;
  std::vector<double> rho;
  bool reset_once = false;

  while (true) {
    res.grad_norm = cur.gradient.norm();
    if (res.grad_norm <= opt.grad_tol) {
      res.converged = true;
      break;
    }
    if (res.iterations >= opt.max_iters) break;

    // Two-loop recursion.
    Eigen::VectorXd q = cur.gradient;
    const std::size_t k = s_hist.size();
    std::vector<double> a(k);
    for (std::size_t i = k; i-- > 0;) {
      a[i] = rho[i] * s_hist[i].dot(q);
      q -= a[i] * y_hist[i];
    }
    double gamma = 1.0;
    if (k > 0) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    Eigen::VectorXd d = gamma * q;
    for (std::size_t i = 0; i < k; ++i) {
      const double b = rho[i] * y_hist[i].dot(d);
      d += (a[i] - b) * s_hist[i];
    }
    d = -d;
    double dphi0 = cur.gradient.dot(d);
    if (!(dphi0 < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho.clear();
      d = -cur.gradient;
      dphi0 = -cur.gradient.squaredNorm();
    }
    const double alpha0 = k == 0 ? std::min(1.0, 1.0 / res.grad_norm) : 1.0;

    LineSearch ls{fn, res.params, d, cur.value, dphi0, opt};
    std::optional<Probe> step = ls.run(alpha0);
    res.evaluations += ls.evals;
    if (!step) {
      if (!reset_once && !s_hist.empty()) {
        reset_once = true;
        s_hist.clear();
        y_hist.clear();
        rho.clear();
        continue;
      }
      res.line_search_failed = true;
      break;
    }
    reset_once = false;
    const Eigen::VectorXd s = step->alpha * d;
    const Eigen::VectorXd y = step->g - cur.gradient;
    res.params += s;
    cur.value = step->f;
    cur.gradient = std::move(step->g);
    res.value = cur.value;
    ++res.iterations;
    res.history.push_back(cur.value);
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (s_hist.size() == opt.memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho.erase(rho.begin());
      }
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho.push_back(1.0 / sy);
    }
  }
  res.grad_norm = cur.gradient.norm();
  return res;
}

void save_loss_history(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << "stage,iteration,loss,data,physics,ramp,repulsion\n";
  for (const auto& r : history) {
    out << r.stage << ',' << r.iteration << ',' << format_double(r.loss) << ',' << format_double(r.data) << ','
        << format_double(r.physics) << ',' << format_double(r.ramp) << ',' << format_double(r.repulsion) << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// MAP pre-training

void StagePlan::validate() const {
  if (stage_a_iters == 0 && stage_b_iters == 0 && stage_c_iters == 0) throw invalid_argument("stage plan is empty");
  if (ramp_window > stage_b_iters) throw invalid_argument("ramp window exceeds stage B");
  if (!(lr_a > 0.0 && lr_b > 0.0)) throw invalid_argument("learning rates must be positive");
  if (lbfgs_memory == 0) throw invalid_argument("L-BFGS memory must be positive");
  if (history_stride == 0) throw invalid_argument("history stride must be positive");
}

namespace {

struct MapParts {
  double data = 0.0;      // -(tempered data log-lik)
  double physics = 0.0;   // -(tempered physics log-lik), unweighted
};

LossAndGradient map_objective_parts(const NetworkSpec& net, ParamView params, const ObservationSet& obs,
                                    const PointSet& minibatch, std::size_t n_collocation,
                                    const TemperedPosteriorSpec& spec, const Problem& problem, double physics_weight,
                                    MapParts* parts) {
  TapedLoss loss = [&](ParamView th, GradientTape& tape) {
    const double prior = log_prior_taped(tape, th, spec.sigma_prior, -1.0);
    const double data = data_log_lik_taped(tape, net, th, obs, DataGroup::kVelocity, spec, -1.0) +
                        data_log_lik_taped(tape, net, th, obs, DataGroup::kReynolds, spec, -1.0);
    double phys = 0.0;
    if (physics_weight != 0.0) {
      phys = physics_log_lik_taped(tape, net, th, minibatch, n_collocation, spec, problem, -physics_weight);
    }
    if (parts) {
      parts->data = -data;
      parts->physics = -phys;
    }
    return -(prior + data + physics_weight * phys);
  };
  return loss_gradient(loss, params);
}

}  // namespace

LossAndGradient map_stage_objective(const NetworkSpec& net, ParamView params, const ObservationSet& obs,
                                    const PointSet& minibatch, std::size_t n_collocation,
                                    const TemperedPosteriorSpec& spec, const Problem& problem, double physics_weight) {
  return map_objective_parts(net, params, obs, minibatch, n_collocation, spec, problem, physics_weight, nullptr);
}

LossAndGradient neg_log_posterior(const NetworkSpec& net, ParamView params, const ObservationSet& obs,
                                  const PointSet& collocation, const TemperedPosteriorSpec& spec,
                                  const Problem& problem) {
  return map_stage_objective(net, params, obs, collocation, static_cast<std::size_t>(collocation.cols()), spec,
                             problem, 1.0);
}

MapResult run_map_pretraining(const NetworkSpec& net, ParamVector init, const ObservationSet& obs,
                              const PointSet& collocation, const TemperedPosteriorSpec& spec,
                              const Problem& problem, const StagePlan& plan, std::uint64_t seed) {
  plan.validate();
  spec.validate();
  obs.validate(problem);
  if (collocation.cols() == 0) throw invalid_argument("collocation set is empty");
  const auto n_col = static_cast<std::size_t>(collocation.cols());
  MapResult res;
  ParamVector theta = std::move(init);
  if (static_cast<std::size_t>(theta.size()) != net.param_count()) throw dimension_error("initial parameter length");

  auto step_or_throw = [&](const std::string& stage, std::size_t it, const PointSet& batch, double w,
                           MapParts& parts) {
    try {
      return map_objective_parts(net, theta, obs, batch, n_col, spec, problem, w, &parts);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNonFinite) throw stage_error(std::string("divergence: ") + e.what(), stage, it);
      throw;
    }
  };

  AdamState adam(net.param_count());
  for (std::size_t it = 0; it < plan.stage_a_iters; ++it) {
    MapParts parts;
    const LossAndGradient lg = step_or_throw("A", it, collocation, 0.0, parts);
    if (it % plan.history_stride == 0) res.history.push_back({"A", it, lg.value, parts.data, 0.0, 0.0, 0.0});
    adam_step(adam, theta, lg.gradient, plan.lr_a, 0.0);
  }

  adam = AdamState(net.param_count());
  Rng batch_rng(derive_seed(seed, 1));
  for (std::size_t it = 0; it < plan.stage_b_iters; ++it) {
    const double w = cosine_ramp(static_cast<double>(it), static_cast<double>(plan.ramp_window));
    const PointSet batch = draw_minibatch(collocation, plan.pde_minibatch, batch_rng);
    MapParts parts;
    const LossAndGradient lg = step_or_throw("B", it, batch, w, parts);
    if (it % plan.history_stride == 0) res.history.push_back({"B", it, lg.value, parts.data, parts.physics, w, 0.0});
    const double lr = plan.cosine_decay_b ? cosine_decay(plan.lr_b, it, plan.stage_b_iters) : plan.lr_b;
    adam_step(adam, theta, lg.gradient, lr, 0.0);
  }

  if (plan.stage_c_iters > 0) {
    MapParts parts;
    ValueGradientFn fn = [&](ParamView th) {
      return map_objective_parts(net, th, obs, collocation, n_col, spec, problem, 1.0, &parts);
    };
    LbfgsOptions opt;
    opt.max_iters = plan.stage_c_iters;
    opt.memory = plan.lbfgs_memory;
    LbfgsResult lb;
    try {
      lb = lbfgs_minimize(fn, theta, opt);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNonFinite) throw stage_error(std::string("divergence: ") + e.what(), "C", 0);
      throw;
    }
    for (std::size_t i = 0; i < lb.history.size(); i += plan.history_stride) {
      res.history.push_back({"C", i, lb.history[i], 0.0, 0.0, 1.0, 0.0});
    }
    theta = std::move(lb.params);
    res.lbfgs_line_search_failed = lb.line_search_failed;
    res.lbfgs_iterations = lb.iterations;
    res.lbfgs_evaluations = lb.evaluations;
  }
  MapParts parts;
  const LossAndGradient fin = map_objective_parts(net, theta, obs, collocation, n_col, spec, problem, 1.0, &parts);
  res.final_neg_log_posterior = fin.value;
  res.history.push_back({"final", plan.stage_c_iters, fin.value, parts.data, parts.physics, 1.0, 0.0});
  res.params = std::move(theta);
  return res;
}

// ---------------------------------------------------------------------------
// PINN-loss training

void PinnTrainConfig::validate() const {
  if (!(lr > 0.0)) throw invalid_argument("learning rate must be positive");
  if (weight_decay < 0.0) throw invalid_argument("weight decay must be non-negative");
  if (lambda_pde < 0.0) throw invalid_argument("lambda_pde must be non-negative");
  if (!(ramp_fraction >= 0.0 && ramp_fraction <= 1.0)) throw invalid_argument("ramp fraction must lie in [0, 1]");
  if (history_stride == 0) throw invalid_argument("history stride must be positive");
}

void EnsembleConfig::validate() const {
  train.validate();
  if (members < 2) throw invalid_argument("an ensemble needs at least two members");
  if (lambda_rep < 0.0) throw invalid_argument("lambda_rep must be non-negative");
  if (bandwidth && !(*bandwidth > 0.0)) throw invalid_argument("repulsion bandwidth must be positive");
  if (!(bandwidth_warmup_fraction >= 0.0 && bandwidth_warmup_fraction <= 1.0)) {
    throw invalid_argument("bandwidth warmup fraction must lie in [0, 1]");
  }
  if (variant == RepulsionVariant::kFunctionSpace && lambda_rep > 0.0 && repulsion_points.cols() == 0) {
    throw invalid_argument("function-space repulsion needs evaluation points");
  }
}

namespace {

/// Per-model training state shared by single runs, ensemble members and MC
/// dropout.
struct Trainee {
  ParamVector params;
  AdamState adam;
  Rng batch_rng;
  Rng mask_rng;
  std::uint64_t seed;

  Trainee(ParamVector p, std::uint64_t s)
      : params(std::move(p)), adam(static_cast<std::size_t>(params.size())), batch_rng(derive_seed(s, 1)),
        mask_rng(derive_seed(s, 2)), seed(s) {}
};

struct StepTerms {
  double lr = 0.0;
  double ramp = 0.0;
  double rep_weight = 0.0;
};

StepTerms schedule(const PinnTrainConfig& cfg, std::size_t t) {
  StepTerms s;
  const double window = cfg.ramp_fraction * static_cast<double>(cfg.epochs);
  s.lr = cfg.cosine_decay ? cosine_decay(cfg.lr, t, cfg.epochs) : cfg.lr;
  s.ramp = cosine_ramp(static_cast<double>(t), window);
  s.rep_weight = window > 0.0 ? std::min(1.0, static_cast<double>(t) / window) : 1.0;
  return s;
}

/// Gradient of lambda_pde * ramp PINN loss (plus an optional extra taped
/// term) for one model on this step's mini-batch.
struct PinnGradient {
  LossAndGradient lg;
  PinnLossParts parts;
  double extra = 0.0;
};

PinnGradient pinn_gradient(const NetworkSpec& net, Trainee& m, const ObservationSet& obs, const PointSet& collocation,
                           const Problem& problem, const PinnTrainConfig& cfg, double ramp, bool dropout,
                           const std::function<double(ParamView, GradientTape&)>& extra) {
  const PointSet batch = draw_minibatch(collocation, cfg.pde_minibatch, m.batch_rng);
  DropoutMasks data_masks, pde_masks;
  if (dropout) {
    data_masks = sample_dropout_masks(net, obs.size(), m.mask_rng());
    pde_masks = sample_dropout_masks(net, static_cast<std::size_t>(batch.cols()), m.mask_rng());
  }
  PinnGradient out;
  const double lam = cfg.lambda_pde * ramp;
  TapedLoss loss = [&](ParamView th, GradientTape& tape) {
    out.parts = pinn_loss_taped(tape, net, th, obs, batch, lam, problem, dropout ? &data_masks : nullptr,
                                dropout ? &pde_masks : nullptr);
    double v = out.parts.data + lam * out.parts.pde;
    if (extra) {
      out.extra = extra(th, tape);
      v += out.extra;
    }
    return v;
  };
  out.lg = loss_gradient(loss, m.params);
  return out;
}

PinnTrainResult train_single(const NetworkSpec& net, ParamVector init, const ObservationSet& obs,
                             const PointSet& collocation, const Problem& problem, const PinnTrainConfig& cfg,
                             std::uint64_t seed, bool dropout, const std::string& stage) {
  cfg.validate();
  obs.validate(problem);
  if (static_cast<std::size_t>(init.size()) != net.param_count()) throw dimension_error("initial parameter length");
  Trainee m(std::move(init), seed);
  PinnTrainResult res;
  for (std::size_t t = 0; t < cfg.epochs; ++t) {
    const StepTerms s = schedule(cfg, t);
    PinnGradient g;
    try {
      g = pinn_gradient(net, m, obs, collocation, problem, cfg, s.ramp, dropout, nullptr);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNonFinite) throw stage_error(std::string("divergence: ") + e.what(), stage, t);
      throw;
    }
    if (t % cfg.history_stride == 0) {
      res.history.push_back({stage, t, g.lg.value, g.parts.data, g.parts.pde, s.ramp, 0.0});
    }
    adam_step(m.adam, m.params, g.lg.gradient, s.lr, cfg.weight_decay);
  }
  res.params = std::move(m.params);
  return res;
}

double median_bandwidth(double median_sq) { return median_sq > 0.0 ? std::sqrt(median_sq) : 1.0; }

}  // namespace

PinnTrainResult train_pinn(const NetworkSpec& net, ParamVector init, const ObservationSet& obs,
                           const PointSet& collocation, const Problem& problem, const PinnTrainConfig& config,
                           std::uint64_t seed) {
  return train_single(net, std::move(init), obs, collocation, problem, config, seed, false, "pinn");
}

PinnTrainResult train_mc_dropout(const NetworkSpec& net, ParamVector init, const ObservationSet& obs,
                                 const PointSet& collocation, const Problem& problem, const PinnTrainConfig& config,
                                 std::uint64_t seed) {
  if (!(net.dropout_rate > 0.0)) throw invalid_argument("MC dropout training needs a positive dropout rate");
  return train_single(net, std::move(init), obs, collocation, problem, config, seed, true, "dropout");
}

EnsembleResult train_repulsive_ensemble(const NetworkSpec& net, const ObservationSet& obs,
                                        const PointSet& collocation, const Problem& problem,
                                        const EnsembleConfig& config, std::uint64_t seed) {
  config.validate();
  obs.validate(problem);
  const PinnTrainConfig& cfg = config.train;
  const std::size_t M = config.members;
  std::vector<Trainee> members;
  members.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    const std::uint64_t s = derive_seed(seed, m);
    members.emplace_back(init_params(net, s), s);
  }
  EnsembleResult res;
  std::vector<bool> restarted(M, false);
  const bool repel = config.lambda_rep > 0.0;
  const bool fspace = config.variant == RepulsionVariant::kFunctionSpace;
  const auto warm_steps = static_cast<std::size_t>(config.bandwidth_warmup_fraction * static_cast<double>(cfg.epochs));
  double bandwidth = config.bandwidth.value_or(1.0);

  std::vector<ParamVector> snap_params(M);
  std::vector<Eigen::MatrixXd> snap_out(M);
  std::vector<PinnGradient> grads(M);
  for (std::size_t t = 0; t < cfg.epochs; ++t) {
    const StepTerms s = schedule(cfg, t);
    double rep_value = 0.0;
    if (repel) {
      for (std::size_t m = 0; m < M; ++m) {
        snap_params[m] = members[m].params;
        if (fspace) snap_out[m] = forward(net, members[m].params, config.repulsion_points);
      }
      if (!config.bandwidth && t <= warm_steps) {
        bandwidth = median_bandwidth(fspace ? median_sq_distance(snap_out) : median_sq_distance(snap_params));
      }
      rep_value = fspace ? repulsion_function_space(snap_out, bandwidth)
                         : repulsion_parameter_space(snap_params, bandwidth);
    }
    const double rep_scale = config.lambda_rep * s.rep_weight;
    for (std::size_t m = 0; m < M; ++m) {
      std::function<double(ParamView, GradientTape&)> extra;
      if (repel && rep_scale > 0.0) {
        extra = [&, m](ParamView th, GradientTape& tape) {
          if (fspace) {
            return rep_scale * repulsion_function_space_taped(tape, m, net, th, snap_out, config.repulsion_points,
                                                              bandwidth, rep_scale);
          }
          tape.add_param_adjoint(repulsion_parameter_space_gradient(m, snap_params, bandwidth), rep_scale);
          return rep_scale * rep_value;
        };
      }
      while (true) {
        try {
          grads[m] = pinn_gradient(net, members[m], obs, collocation, problem, cfg, s.ramp, false, extra);
          break;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kNonFinite) throw;
          if (restarted[m]) throw stage_error("member " + std::to_string(m) + " diverged twice", "ensemble", t);
          restarted[m] = true;
          res.restarts.push_back(m);
          const std::uint64_t s2 = derive_seed(members[m].seed, 0x5eed);
          members[m] = Trainee(init_params(net, s2), s2);
          if (repel) {
            snap_params[m] = members[m].params;
            if (fspace) snap_out[m] = forward(net, members[m].params, config.repulsion_points);
          }
        }
      }
    }
    if (t % cfg.history_stride == 0) {
      LossRecord r{"ensemble", t, 0.0, 0.0, 0.0, s.ramp, rep_value};
      for (const auto& g : grads) {
        r.loss += g.lg.value / static_cast<double>(M);
        r.data += g.parts.data / static_cast<double>(M);
        r.physics += g.parts.pde / static_cast<double>(M);
      }
      res.history.push_back(r);
    }
    for (std::size_t m = 0; m < M; ++m) adam_step(members[m].adam, members[m].params, grads[m].lg.gradient, s.lr,
                                                  cfg.weight_decay);
  }
  res.bandwidth = repel ? bandwidth : 0.0;
  for (auto& m : members) res.members.push_back(std::move(m.params));
  return res;
}

}  // namespace pinnuq
