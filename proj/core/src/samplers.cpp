#include "pinnuq/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <utility>

#include <nlohmann/json.hpp>

#include "pinnuq/error.hpp"
#include "pinnuq/rng.hpp"
#include "pinnuq/trainers.hpp"

namespace pinnuq {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Phase {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  double logp = 0.0;
  Eigen::VectorXd grad;
};

// Returns false (state unusable) on a non-finite value or gradient.
bool evaluate(const LogDensityFn& target, Phase& z) {
  try {
    LossAndGradient lg = target(z.q);
    if (!std::isfinite(lg.value) || !lg.gradient.allFinite()) return false;
    z.logp = lg.value;
    z.grad = std::move(lg.gradient);
    return true;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNonFinite) return false;
    throw;
  }
}

bool leapfrog_step(const LogDensityFn& target, Phase& z, double eps, const Eigen::VectorXd& inv_mass) {
  z.p.noalias() += (0.5 * eps) * z.grad;
  z.q.array() += eps * (inv_mass.array() * z.p.array());
  if (!z.q.allFinite() || !evaluate(target, z)) return false;
  z.p.noalias() += (0.5 * eps) * z.grad;
  return z.p.allFinite();
}

double kinetic(const Eigen::VectorXd& p, const Eigen::VectorXd& inv_mass) {
  return 0.5 * (p.array().square() * inv_mass.array()).sum();
}

double hamiltonian(const Phase& z, const Eigen::VectorXd& inv_mass) { return -z.logp + kinetic(z.p, inv_mass); }

Eigen::VectorXd inverse_mass(const Eigen::VectorXd& mass_diag, Eigen::Index n) {
  if (mass_diag.size() == 0) return Eigen::VectorXd::Ones(n);
  if (mass_diag.size() != n) throw dimension_error("mass matrix diagonal length differs from the parameter count");
  if (!(mass_diag.array() > 0.0).all() || !mass_diag.allFinite()) {
    throw invalid_argument("mass matrix diagonal must be positive and finite");
  }
  return mass_diag.cwiseInverse();
}

Eigen::VectorXd draw_momentum(Rng& rng, const Eigen::VectorXd& inv_mass) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd p(inv_mass.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = normal(rng) / std::sqrt(inv_mass[i]);
  return p;
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Phase start_phase(const LogDensityFn& target, const ParamVector& init) {
  Phase z;
  z.q = init;
  if (!init.allFinite()) throw invalid_argument("initial point is not finite");
  if (!evaluate(target, z)) throw Error(ErrorKind::kNonFinite, "log density is not finite at the initial point");
  return z;
}

void finish_diagnostics(SamplerDiagnostics& d, double accept_sum, std::size_t n) {
  d.acceptance_rate = n > 0 ? accept_sum / static_cast<double>(n) : 0.0;
  d.divergence_warning = n > 0 && 4 * d.divergences > n;
}

// -------------------------------------------------------------------------
// NUTS tree building

struct TreeContext {
  const LogDensityFn* target;
  const Eigen::VectorXd* inv_mass;
  Rng* rng;
  double eps;
  double h0;
  double max_energy_error;
  std::size_t n_leapfrog = 0;
  double sum_metro_prob = 0.0;
  bool divergent = false;
  bool record = false;
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> new_states;
};

bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus, const Eigen::VectorXd& rho) {
  return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
}

// Extends `z` by 2^depth leapfrog steps in direction `sign`.  Returns false
// when the subtree diverged or contains a U-turn; it must then be discarded.
bool build_tree(TreeContext& ctx, std::size_t depth, Phase& z, Phase& z_propose, Eigen::VectorXd& p_sharp_beg,
                Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end,
                double sign, double& log_sum_weight) {
  const Eigen::VectorXd& inv_mass = *ctx.inv_mass;
  if (depth == 0) {
    const bool ok = leapfrog_step(*ctx.target, z, sign * ctx.eps, inv_mass);
    ++ctx.n_leapfrog;
    double h = ok ? hamiltonian(z, inv_mass) : kInf;
    if (std::isnan(h)) h = kInf;
    if (h - ctx.h0 > ctx.max_energy_error) ctx.divergent = true;
    log_sum_weight = log_sum_exp(log_sum_weight, ctx.h0 - h);
    ctx.sum_metro_prob += ctx.h0 - h > 0.0 ? 1.0 : std::exp(ctx.h0 - h);
    if (ctx.divergent) return false;
    z_propose = z;
    p_sharp_beg = inv_mass.cwiseProduct(z.p);
    p_sharp_end = p_sharp_beg;
    rho += z.p;
    p_beg = z.p;
    p_end = z.p;
    if (ctx.record) ctx.new_states.emplace_back(z.q, z.p);
    return true;
  }

  const Eigen::Index n = z.q.size();
  Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd p_init_end(n), p_sharp_init_end(n);
  double lsw_init = -kInf;
  if (!build_tree(ctx, depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, sign,
                  lsw_init)) {
    return false;
  }

  Phase z_propose_final = z;
  Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd p_final_beg(n), p_sharp_final_beg(n);
  double lsw_final = -kInf;
  if (!build_tree(ctx, depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end,
                  sign, lsw_final)) {
    return false;
  }

  const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
  log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
  if (lsw_final > lsw_subtree) {
    z_propose = z_propose_final;
  } else if (uniform01(*ctx.rng) < std::exp(lsw_final - lsw_subtree)) {
    z_propose = z_propose_final;
  }

  const Eigen::VectorXd rho_subtree = rho_init + rho_final;
  rho += rho_subtree;
  bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
  persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
  persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
  return persist;
}

struct Transition {
  Phase z;
  double accept_stat = 0.0;
  std::size_t n_leapfrog = 0;
  std::size_t depth = 0;
  bool divergent = false;
  TrajectoryRecord record;
};

Transition nuts_transition(const LogDensityFn& target, const Phase& current, double eps,
                           const Eigen::VectorXd& inv_mass, const NutsConfig& cfg, Rng& rng, bool record) {
  Phase z = current;
  z.p = draw_momentum(rng, inv_mass);

  TreeContext ctx{&target, &inv_mass, &rng, eps, hamiltonian(z, inv_mass), cfg.max_energy_error, 0, 0.0, false, false, {}};
  ctx.record = record;

  Phase z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
  Eigen::VectorXd p_sharp = inv_mass.cwiseProduct(z.p);
  Eigen::VectorXd p_fwd_fwd = z.p, p_sharp_fwd_fwd = p_sharp;
  Eigen::VectorXd p_fwd_bck = z.p, p_sharp_fwd_bck = p_sharp;
  Eigen::VectorXd p_bck_fwd = z.p, p_sharp_bck_fwd = p_sharp;
  Eigen::VectorXd p_bck_bck = z.p, p_sharp_bck_bck = p_sharp;
  Eigen::VectorXd rho = z.p;
  double log_sum_weight = 0.0;
  std::size_t depth = 0;
  bool u_turn = false;

  Transition out;
  if (record) {
    out.record.positions.push_back(z.q);
    out.record.momenta.push_back(z.p);
    out.record.inv_mass = inv_mass;
  }

  const Eigen::Index n = z.q.size();
  while (depth < cfg.max_tree_depth) {
    Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(n), rho_bck = Eigen::VectorXd::Zero(n);
    double lsw_subtree = -kInf;
    bool valid = false;
    ctx.new_states.clear();
    const bool forward = uniform01(rng) > 0.5;
    if (forward) {
      rho_bck = rho;
      p_bck_fwd = p_fwd_bck;
      p_sharp_bck_fwd = p_sharp_fwd_bck;
      Phase zz = z_fwd;
      valid = build_tree(ctx, depth, zz, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                         1.0, lsw_subtree);
      z_fwd = std::move(zz);
    } else {
      rho_fwd = rho;
      p_fwd_bck = p_bck_fwd;
      p_sharp_fwd_bck = p_sharp_bck_fwd;
      Phase zz = z_bck;
      valid = build_tree(ctx, depth, zz, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                         -1.0, lsw_subtree);
      z_bck = std::move(zz);
    }
    if (!valid) {
      u_turn = !ctx.divergent;
      break;
    }
    if (record) {
      auto& pos = out.record.positions;
      auto& mom = out.record.momenta;
      if (forward) {
        for (auto& s : ctx.new_states) {
          pos.push_back(s.first);
          mom.push_back(s.second);
        }
      } else {
        for (auto& s : ctx.new_states) {
          pos.insert(pos.begin(), s.first);
          mom.insert(mom.begin(), s.second);
        }
      }
    }
    ++depth;

    if (lsw_subtree > log_sum_weight) {
      z_sample = z_propose;
    } else if (uniform01(rng) < std::exp(lsw_subtree - log_sum_weight)) {
      z_sample = z_propose;
    }
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

    rho = rho_bck + rho_fwd;
    bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
    persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
    persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
    if (!persist) {
      u_turn = true;
      break;
    }
  }

  out.z = std::move(z_sample);
  out.n_leapfrog = ctx.n_leapfrog;
  out.accept_stat = ctx.n_leapfrog > 0 ? ctx.sum_metro_prob / static_cast<double>(ctx.n_leapfrog) : 0.0;
  out.depth = depth;
  out.divergent = ctx.divergent;
  if (record) {
    out.record.depth = depth;
    out.record.u_turn = u_turn;
    out.record.divergent = ctx.divergent;
  }
  return out;
}

// Welford accumulator over warmup draws.
struct RunningVariance {
  std::size_t n = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd m2;

  void add(const Eigen::VectorXd& x) {
    if (n == 0) {
      mean = Eigen::VectorXd::Zero(x.size());
      m2 = Eigen::VectorXd::Zero(x.size());
    }
    ++n;
    const Eigen::VectorXd delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2.array() += delta.array() * (x - mean).array();
  }

  // Variance shrunk towards 1e-3 with weight 5 / (n + 5).
  Eigen::VectorXd regularized() const {
    const double nd = static_cast<double>(n);
    const Eigen::VectorXd var = m2 / std::max(1.0, nd - 1.0);
    return (nd / (nd + 5.0)) * var.array() + 1e-3 * (5.0 / (nd + 5.0));
  }
};

}  // namespace

// ---------------------------------------------------------------------------

LeapfrogResult leapfrog(const LogDensityFn& target, const Eigen::VectorXd& position, const Eigen::VectorXd& momentum,
                        double step_size, std::size_t n_steps, const Eigen::VectorXd& mass_diag) {
  if (position.size() != momentum.size()) throw dimension_error("position and momentum lengths differ");
  const Eigen::VectorXd inv_mass = inverse_mass(mass_diag, position.size());
  LeapfrogResult r;
  Phase z;
  z.q = position;
  z.p = momentum;
  if (!position.allFinite() || !momentum.allFinite() || !evaluate(target, z)) {
    r.position = position;
    r.momentum = momentum;
    r.divergent = true;
    return r;
  }
  for (std::size_t i = 0; i < n_steps; ++i) {
    if (!leapfrog_step(target, z, step_size, inv_mass)) {
      r.divergent = true;
      break;
    }
  }
  r.position = std::move(z.q);
  r.momentum = std::move(z.p);
  r.logp = z.logp;
  r.grad = std::move(z.grad);
  return r;
}

bool no_u_turn_stop(const Eigen::VectorXd& rho, const Eigen::VectorXd& p_minus, const Eigen::VectorXd& p_plus,
                    const Eigen::VectorXd& inv_mass) {
  return !criterion(inv_mass.cwiseProduct(p_minus), inv_mass.cwiseProduct(p_plus), rho);
}

DualAveraging::DualAveraging(double step_size, double target_accept) : target_(target_accept) { restart(step_size); }

void DualAveraging::restart(double step_size) {
  mu_ = std::log(10.0 * step_size);
  h_bar_ = 0.0;
  log_eps_ = std::log(step_size);
  log_eps_bar_ = 0.0;
  t_ = 0;
}

double DualAveraging::update(double accept_stat) {
  constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;
  if (!std::isfinite(accept_stat)) accept_stat = 0.0;
  accept_stat = std::clamp(accept_stat, 0.0, 1.0);
  ++t_;
  const double t = static_cast<double>(t_);
  const double eta = 1.0 / (t + kT0);
  h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_stat);
  log_eps_ = mu_ - std::sqrt(t) / kGamma * h_bar_;
  const double x_eta = std::pow(t, -kKappa);
  log_eps_bar_ = x_eta * log_eps_ + (1.0 - x_eta) * log_eps_bar_;
  return std::exp(log_eps_);
}

double DualAveraging::final_step_size() const { return t_ == 0 ? std::exp(log_eps_) : std::exp(log_eps_bar_); }

double find_reasonable_step_size(const LogDensityFn& target, const ParamVector& theta, double initial,
                                 const Eigen::VectorXd& mass_diag, std::uint64_t seed) {
  if (!(initial > 0.0)) throw invalid_argument("initial step size must be positive");
  const Eigen::VectorXd inv_mass = inverse_mass(mass_diag, theta.size());
  Rng rng(seed);
  Phase z0 = start_phase(target, theta);
  z0.p = draw_momentum(rng, inv_mass);
  const double h0 = hamiltonian(z0, inv_mass);
  auto log_accept = [&](double eps) {
    Phase z = z0;
    if (!leapfrog_step(target, z, eps, inv_mass)) return -kInf;
    const double d = h0 - hamiltonian(z, inv_mass);
    return std::isnan(d) ? -kInf : d;
  };
  double eps = initial;
  const double direction = log_accept(eps) > std::log(0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 100; ++i) {
    const double la = log_accept(eps);
    const bool crossed = direction > 0 ? !(la > std::log(0.5)) : la > std::log(0.5);
    if (crossed) break;
    eps *= std::pow(2.0, direction);
  }
  return eps;
}

// ---------------------------------------------------------------------------
// HMC

void HmcConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw invalid_argument("HMC step size must be positive");
  if (n_leapfrog == 0) throw invalid_argument("HMC needs at least one leapfrog step");
  if (burn_in == 0 || n_samples == 0) throw invalid_argument("HMC burn-in and sample counts must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw invalid_argument("target acceptance must lie in (0, 1)");
}

PosteriorSamples hmc_sample(const LogDensityFn& target, const ParamVector& init, const HmcConfig& config,
                            std::uint64_t seed) {
  config.validate();
  const Eigen::VectorXd inv_mass = inverse_mass(config.mass_diag, init.size());
  Rng rng(seed);
  Phase current = start_phase(target, init);

  PosteriorSamples out;
  SamplerDiagnostics& d = out.diagnostics;
  d.sampler = "hmc";
  d.mass_diag = config.mass_diag;
  out.samples.resize(static_cast<Eigen::Index>(config.n_samples), init.size());

  DualAveraging da(config.step_size, config.target_accept);
  double eps = config.step_size;
  double accept_sum = 0.0, warm_accept_sum = 0.0;
  std::size_t warm_accepted = 0;
  const std::size_t total = config.burn_in + config.n_samples;
  for (std::size_t it = 0; it < total; ++it) {
    const bool warm = it < config.burn_in;
    d.step_size_trace.push_back(eps);
    Phase z = current;
    z.p = draw_momentum(rng, inv_mass);
    const double h0 = hamiltonian(z, inv_mass);
    bool ok = true;
    for (std::size_t l = 0; l < config.n_leapfrog && ok; ++l) ok = leapfrog_step(target, z, eps, inv_mass);
    double dh = ok ? h0 - hamiltonian(z, inv_mass) : -kInf;
    if (std::isnan(dh)) dh = -kInf;
    const bool divergent = -dh > 1000.0;
    const double a = dh >= 0.0 ? 1.0 : std::exp(dh);
    const bool accept = std::log(uniform01(rng)) < dh;
    if (accept) current = std::move(z);

    if (warm) {
      warm_accept_sum += a;
      if (accept) ++warm_accepted;
      if (divergent) ++d.warmup_divergences;
      if (config.adapt_step_size) {
        eps = da.update(a);
        if (it + 1 == config.burn_in) eps = da.final_step_size();
      }
      if (it + 1 == config.burn_in && warm_accepted == 0 && config.abort_on_zero_acceptance) {
        Error e = numeric_error("HMC rejected every proposal during burn-in (step size " + std::to_string(eps) +
                                ", " + std::to_string(config.n_leapfrog) + " leapfrog steps)");
        e.stage = "burn-in";
        e.iteration = it;
        throw e;
      }
    } else {
      accept_sum += a;
      if (divergent) ++d.divergences;
      d.n_leapfrog.push_back(config.n_leapfrog);
      out.samples.row(static_cast<Eigen::Index>(it - config.burn_in)) = current.q.transpose();
    }
  }
  d.step_size = eps;
  d.warmup_acceptance_rate = warm_accept_sum / static_cast<double>(config.burn_in);
  finish_diagnostics(d, accept_sum, config.n_samples);
  return out;
}

// ---------------------------------------------------------------------------
// NUTS

void NutsConfig::validate() const {
  if (max_tree_depth == 0) throw invalid_argument("NUTS tree depth must be at least 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw invalid_argument("target acceptance must lie in (0, 1)");
  if (n_samples == 0) throw invalid_argument("NUTS sample count must be positive");
  if (initial_step_size < 0.0) throw invalid_argument("initial step size must be non-negative");
  if (!(max_energy_error > 0.0)) throw invalid_argument("divergence threshold must be positive");
  if (!(init_buffer_fraction >= 0.0 && term_buffer_fraction >= 0.0 && init_buffer_fraction + term_buffer_fraction < 1.0)) {
    throw invalid_argument("warmup buffer fractions must be non-negative and sum below 1");
  }
}

NutsResult nuts_sample_recorded(const LogDensityFn& target, const ParamVector& init, const NutsConfig& config,
                                std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, 0));
  Phase current = start_phase(target, init);
  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(init.size());

  double eps = config.initial_step_size > 0.0
                   ? config.initial_step_size
                   : find_reasonable_step_size(target, init, 1.0, {}, derive_seed(seed, 1));
  DualAveraging da(eps, config.target_accept);

  // The metric window grows to its end, re-estimated whenever its draw count doubles.
  const auto init_buffer = static_cast<std::size_t>(config.init_buffer_fraction * static_cast<double>(config.warmup));
  const auto term_buffer = static_cast<std::size_t>(config.term_buffer_fraction * static_cast<double>(config.warmup));
  const bool windowed = config.adapt_mass && config.warmup >= 20;
  const std::size_t window_end = config.warmup - term_buffer;
  RunningVariance window;
  std::size_t next_update = 25;
  std::size_t restarts = 0;

  NutsResult result;
  PosteriorSamples& out = result.samples;
  SamplerDiagnostics& d = out.diagnostics;
  d.sampler = "nuts";
  out.samples.resize(static_cast<Eigen::Index>(config.n_samples), init.size());
  double accept_sum = 0.0, warm_accept_sum = 0.0;

  const std::size_t total = config.warmup + config.n_samples;
  for (std::size_t it = 0; it < total; ++it) {
    const bool warm = it < config.warmup;
    if (it == config.warmup) eps = config.warmup > 0 ? da.final_step_size() : eps;
    d.step_size_trace.push_back(eps);
    Transition tr = nuts_transition(target, current, eps, inv_mass, config, rng, config.record_trees && !warm);
    current = std::move(tr.z);

    if (warm) {
      warm_accept_sum += tr.accept_stat;
      if (tr.divergent) ++d.warmup_divergences;
      eps = da.update(tr.accept_stat);
      if (windowed && it >= init_buffer && it < window_end) {
        window.add(current.q);
        const bool last = it + 1 == window_end;
        if (window.n == next_update || last) {
          if (last || window_end - it - 1 >= next_update) {
            inv_mass = window.regularized();
            eps = find_reasonable_step_size(target, current.q, eps, inv_mass.cwiseInverse(),
                                            derive_seed(seed, 2 + restarts++));
            da.restart(eps);
          }
          next_update *= 2;
        }
      }
    } else {
      accept_sum += tr.accept_stat;
      if (tr.divergent) ++d.divergences;
      d.n_leapfrog.push_back(tr.n_leapfrog);
      d.tree_depth.push_back(tr.depth);
      out.samples.row(static_cast<Eigen::Index>(it - config.warmup)) = current.q.transpose();
      if (config.record_trees) result.trees.push_back(std::move(tr.record));
    }
  }
  d.step_size = config.warmup > 0 ? da.final_step_size() : eps;
  if (config.warmup > 0) d.warmup_acceptance_rate = warm_accept_sum / static_cast<double>(config.warmup);
  if (windowed) d.mass_diag = inv_mass.cwiseInverse();
  finish_diagnostics(d, accept_sum, config.n_samples);
  return result;
}

PosteriorSamples nuts_sample(const LogDensityFn& target, const ParamVector& init, const NutsConfig& config,
                             std::uint64_t seed) {
  NutsConfig c = config;
  c.record_trees = false;
  return nuts_sample_recorded(target, init, c, seed).samples;
}

double effective_sample_size(const Eigen::VectorXd& chain) {
  const Eigen::Index n = chain.size();
  if (n < 4) throw invalid_argument("effective sample size needs at least four draws");
  const Eigen::VectorXd c = chain.array() - chain.mean();
  const double c0 = c.squaredNorm() / static_cast<double>(n);
  if (c0 == 0.0) return static_cast<double>(n);
  auto rho = [&](Eigen::Index lag) {
    return c.head(n - lag).dot(c.tail(n - lag)) / static_cast<double>(n) / c0;
  };
  // Sum of consecutive pairs Gamma_k = rho(2k) + rho(2k+1) while positive,
  // forced non-increasing.
  double tau = -1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
    double g = rho(2 * k) + rho(2 * k + 1);
    if (g <= 0.0) break;
    g = std::min(g, prev);
    prev = g;
    tau += 2.0 * g;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(n)));
  return static_cast<double>(n) / tau;
}

double mcse_mean(const Eigen::VectorXd& chain) {
  const double n = static_cast<double>(chain.size());
  const double var = (chain.array() - chain.mean()).square().sum() / (n - 1.0);
  return std::sqrt(var / effective_sample_size(chain));
}

// ---------------------------------------------------------------------------
// Collocation subsampling

PointSet draw_collocation_subsample(const PointSet& collocation, std::size_t size, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(collocation.cols());
  if (size == 0) throw invalid_argument("subsample size must be positive");
  if (size > n) throw invalid_argument("subsample size exceeds the collocation set");
  if (size == n) return collocation;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  PointSet out(collocation.rows(), static_cast<Eigen::Index>(size));
  for (std::size_t i = 0; i < size; ++i) {
    out.col(static_cast<Eigen::Index>(i)) = collocation.col(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

double subsampled_physics_logp(const TemperedPosteriorSpec& spec, const NetworkSpec& net, ParamView params,
                               const PointSet& collocation, std::size_t subsample_size, std::uint64_t seed,
                               const Problem& problem) {
  const PointSet sub = draw_collocation_subsample(collocation, subsample_size, seed);
  GradientTape tape(net.param_count());
  return physics_log_lik_taped(tape, net, params, sub, static_cast<std::size_t>(collocation.cols()), spec, problem,
                               0.0);
}

LogDensityFn tempered_posterior_target(const NetworkSpec& net, const ObservationSet& obs, PointSet subsample,
                                       std::size_t n_collocation, const TemperedPosteriorSpec& spec,
                                       const Problem& problem) {
  spec.validate();
  obs.validate(problem);
  if (subsample.cols() == 0) throw invalid_argument("collocation subsample is empty");
  return [net, obs, sub = std::move(subsample), n_collocation, spec, problem](ParamView theta) {
    LossAndGradient lg = map_stage_objective(net, theta, obs, sub, n_collocation, spec, problem, 1.0);
    lg.value = -lg.value;
    lg.gradient = -lg.gradient;
    return lg;
  };
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'P', 'N', 'U', 'Q', 'S', 'M', 'P', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw io_error("truncated samples file " + path);
  return v;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_samples(const std::string& path, const PosteriorSamples& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(samples.samples.rows()));
  write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(samples.samples.cols()));
  for (Eigen::Index r = 0; r < samples.samples.rows(); ++r) {
    for (Eigen::Index c = 0; c < samples.samples.cols(); ++c) write_pod<double>(os, samples.samples(r, c));
  }
  if (!os) throw io_error("failed writing " + path);

  const SamplerDiagnostics& d = samples.diagnostics;
  nlohmann::json j;
  j["sampler"] = d.sampler;
  j["n_samples"] = samples.samples.rows();
  j["n_params"] = samples.samples.cols();
  j["acceptance_rate"] = d.acceptance_rate;
  j["warmup_acceptance_rate"] = d.warmup_acceptance_rate;
  j["step_size"] = d.step_size;
  j["step_size_trace"] = d.step_size_trace;
  j["divergences"] = d.divergences;
  j["warmup_divergences"] = d.warmup_divergences;
  j["divergence_warning"] = d.divergence_warning;
  j["n_leapfrog"] = d.n_leapfrog;
  j["tree_depth"] = d.tree_depth;
  j["mass_diag"] = to_vector(d.mass_diag);
  std::ofstream js(path + ".json");
  if (!js) throw io_error("cannot open " + path + ".json for writing");
  js << j.dump(2) << '\n';
}

PosteriorSamples load_samples(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw io_error(path + " is not a samples file");
  }
  const auto rows = read_pod<std::uint64_t>(is, path);
  const auto cols = read_pod<std::uint64_t>(is, path);
  PosteriorSamples out;
  out.samples.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < out.samples.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.samples.cols(); ++c) out.samples(r, c) = read_pod<double>(is, path);
  }

  std::ifstream js(path + ".json");
  if (!js) return out;
  nlohmann::json j;
  try {
    js >> j;
    SamplerDiagnostics& d = out.diagnostics;
    d.sampler = j.value("sampler", std::string());
    d.acceptance_rate = j.value("acceptance_rate", 0.0);
    d.warmup_acceptance_rate = j.value("warmup_acceptance_rate", 0.0);
    d.step_size = j.value("step_size", 0.0);
    d.step_size_trace = j.value("step_size_trace", std::vector<double>{});
    d.divergences = j.value("divergences", std::size_t{0});
    d.warmup_divergences = j.value("warmup_divergences", std::size_t{0});
    d.divergence_warning = j.value("divergence_warning", false);
    d.n_leapfrog = j.value("n_leapfrog", std::vector<std::size_t>{});
    d.tree_depth = j.value("tree_depth", std::vector<std::size_t>{});
    d.mass_diag = from_vector(j.value("mass_diag", std::vector<double>{}));
  } catch (const nlohmann::json::exception& e) {
    throw io_error(path + ".json: " + e.what());
  }
  return out;
}

}  // namespace pinnuq
