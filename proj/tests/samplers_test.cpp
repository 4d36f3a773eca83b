#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include <Eigen/LU>
#include <gtest/gtest.h>

#include "pinnuq/error.hpp"
#include "pinnuq/samplers.hpp"
#include "support/oracles.hpp"

namespace pinnuq {
namespace {

// Zero-mean Gaussian with precision matrix `prec`.
LogDensityFn gaussian(const Eigen::MatrixXd& prec) {
  return [prec](ParamView x) {
    LossAndGradient lg;
    lg.gradient = -prec * x;
    lg.value = 0.5 * x.dot(lg.gradient);
    return lg;
  };
}

LogDensityFn isotropic(Eigen::Index d, double sigma = 1.0) {
  return gaussian(Eigen::MatrixXd::Identity(d, d) / (sigma * sigma));
}

Eigen::MatrixXd sample_cov(const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd c = s.rowwise() - s.colwise().mean();
  return c.transpose() * c / static_cast<double>(s.rows() - 1);
}

double energy(const LogDensityFn& f, const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  return -f(q).value + 0.5 * p.squaredNorm();
}

TEST(Leapfrog, FreeParticleDrifts) {
  LogDensityFn flat = [](ParamView x) { return LossAndGradient{0.0, Eigen::VectorXd::Zero(x.size())}; };
  const Eigen::Vector2d q(1.0, -2.0), p(0.5, 3.0);
  const LeapfrogResult r = leapfrog(flat, q, p, 0.1, 10);
  EXPECT_FALSE(r.divergent);
  EXPECT_NEAR((r.position - (q + 1.0 * p)).norm(), 0.0, 1e-14);
  EXPECT_EQ(r.momentum, p);
}

TEST(Leapfrog, SecondOrderEnergyError) {
  const LogDensityFn f = isotropic(1);
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 1.3), p = Eigen::VectorXd::Constant(1, -0.4);
  const double h0 = energy(f, q, p);
  auto dh = [&](double eps) {
    const LeapfrogResult r = leapfrog(f, q, p, eps, static_cast<std::size_t>(std::lround(0.8 / eps)));
    return std::abs(energy(f, r.position, r.momentum) - h0);
  };
  const double ratio = dh(0.02) / dh(0.01);
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}

TEST(Leapfrog, TimeReversible) {
  const LogDensityFn f = gaussian((Eigen::Matrix2d() << 2.0, 0.5, 0.5, 1.0).finished());
  const Eigen::Vector2d q(0.7, -0.2), p(1.1, 0.3);
  const LeapfrogResult fwd = leapfrog(f, q, p, 0.05, 40);
  const LeapfrogResult back = leapfrog(f, fwd.position, -fwd.momentum, 0.05, 40);
  EXPECT_LT((back.position - q).norm(), 1e-10);
  EXPECT_LT((back.momentum + p).norm(), 1e-10);
}

TEST(Leapfrog, VolumePreserving) {
  // Non-Gaussian target so the map is not linear.
  LogDensityFn f = [](ParamView x) {
    LossAndGradient lg;
    lg.value = -0.25 * std::pow(x[0], 4) - 0.5 * x[1] * x[1] - 0.3 * x[0] * x[1];
    lg.gradient = Eigen::Vector2d(-std::pow(x[0], 3) - 0.3 * x[1], -x[1] - 0.3 * x[0]);
    return lg;
  };
  Eigen::Vector4d z0(0.4, -0.8, 0.2, 0.6);
  auto map = [&](const Eigen::Vector4d& z) {
    const LeapfrogResult r = leapfrog(f, z.head<2>(), z.tail<2>(), 0.1, 20);
    Eigen::Vector4d out;
    out << r.position, r.momentum;
    return out;
  };
  Eigen::Matrix4d J;
  const double h = 1e-6;
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d a = z0, b = z0;
    a[k] += h;
    b[k] -= h;
    J.col(k) = (map(a) - map(b)) / (2 * h);
  }
  EXPECT_LT(std::abs(J.determinant() - 1.0), 1e-8);
}

TEST(Leapfrog, NonFiniteFlagsDivergence) {
  LogDensityFn f = [](ParamView x) {
    LossAndGradient lg{0.0, Eigen::VectorXd::Zero(x.size())};
    if (x[0] > 1.0) lg.value = std::nan("");
    return lg;
  };
  const LeapfrogResult r = leapfrog(f, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 0.3, 10);
  EXPECT_TRUE(r.divergent);
}

TEST(Hmc, StandardGaussianMoments) {
  HmcConfig cfg;
  cfg.step_size = 0.2;
  cfg.n_leapfrog = 10;
  cfg.burn_in = 200;
  cfg.n_samples = 2000;
  const PosteriorSamples s = hmc_sample(isotropic(2), Eigen::Vector2d(1.0, -1.0), cfg, 11);
  ASSERT_EQ(s.size(), 2000u);
  const double S = 2000.0;
  const Eigen::RowVectorXd mean = s.samples.colwise().mean();
  EXPECT_LT(std::abs(mean[0]), 3.0 / std::sqrt(S));
  EXPECT_LT(std::abs(mean[1]), 3.0 / std::sqrt(S));
  const Eigen::MatrixXd c = sample_cov(s.samples);
  EXPECT_NEAR(c(0, 0), 1.0, 0.1);
  EXPECT_NEAR(c(1, 1), 1.0, 0.1);
  EXPECT_GT(s.diagnostics.acceptance_rate, 0.9);
  EXPECT_EQ(s.diagnostics.step_size_trace.size(), 2200u);
}

TEST(Hmc, WideGaussianStd) {
  HmcConfig cfg;
  cfg.step_size = 0.5;
  cfg.n_leapfrog = 10;
  cfg.burn_in = 200;
  cfg.n_samples = 2000;
  const PosteriorSamples s = hmc_sample(isotropic(1, 3.0), Eigen::VectorXd::Zero(1), cfg, 5);
  const double sd = std::sqrt(sample_cov(s.samples)(0, 0));
  EXPECT_GE(sd, 2.7);
  EXPECT_LE(sd, 3.3);
}

TEST(Hmc, HugeStepRejectsEverything) {
  HmcConfig cfg;
  cfg.step_size = 50.0;
  cfg.n_leapfrog = 5;
  cfg.burn_in = 20;
  cfg.n_samples = 30;
  const Eigen::VectorXd init = Eigen::Vector3d(0.3, -0.1, 0.2);
  const LogDensityFn f = isotropic(3, 0.01);
  EXPECT_THROW(hmc_sample(f, init, cfg, 1), Error);
  cfg.abort_on_zero_acceptance = false;
  const PosteriorSamples s = hmc_sample(f, init, cfg, 1);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s.row(i), init);
  EXPECT_EQ(s.diagnostics.acceptance_rate, 0.0);
}

TEST(Hmc, AbortCarriesDiagnostics) {
  HmcConfig cfg;
  cfg.step_size = 50.0;
  cfg.n_leapfrog = 5;
  cfg.burn_in = 10;
  cfg.n_samples = 10;
  try {
    hmc_sample(isotropic(2, 0.01), Eigen::Vector2d(0.1, 0.1), cfg, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    EXPECT_EQ(e.stage.value_or(""), "burn-in");
  }
}

TEST(Hmc, BitReproducible) {
  HmcConfig cfg;
  cfg.step_size = 0.3;
  cfg.n_leapfrog = 7;
  cfg.burn_in = 50;
  cfg.n_samples = 50;
  cfg.adapt_step_size = true;
  const auto a = hmc_sample(isotropic(4), Eigen::VectorXd::Ones(4), cfg, 99);
  const auto b = hmc_sample(isotropic(4), Eigen::VectorXd::Ones(4), cfg, 99);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.diagnostics.step_size_trace, b.diagnostics.step_size_trace);
  EXPECT_NE(a.samples, hmc_sample(isotropic(4), Eigen::VectorXd::Ones(4), cfg, 98).samples);
}

TEST(Hmc, StepSizeAdaptationHitsTarget) {
  HmcConfig cfg;
  cfg.step_size = 1.5;
  cfg.n_leapfrog = 10;
  cfg.burn_in = 500;
  cfg.n_samples = 1000;
  cfg.adapt_step_size = true;
  const Eigen::VectorXd sd = Eigen::VectorXd::LinSpaced(10, 0.5, 2.0);
  const auto s = hmc_sample(gaussian(sd.array().square().inverse().matrix().asDiagonal()), Eigen::VectorXd::Zero(10),
                            cfg, 3);
  EXPECT_GT(s.diagnostics.acceptance_rate, 0.5);
  EXPECT_LT(s.diagnostics.acceptance_rate, 0.85);
}

TEST(Hmc, InvalidConfig) {
  HmcConfig cfg;
  cfg.step_size = 0.0;
  EXPECT_THROW(hmc_sample(isotropic(1), Eigen::VectorXd::Zero(1), cfg, 1), Error);
  cfg.step_size = 0.1;
  cfg.n_samples = 0;
  EXPECT_THROW(hmc_sample(isotropic(1), Eigen::VectorXd::Zero(1), cfg, 1), Error);
}

TEST(DualAveraging, ConvergesOnMonotoneAcceptance) {
  // Acceptance exp(-eps) reaches 0.65 at eps = -log(0.65).
  DualAveraging da(1.0, 0.65);
  double eps = 1.0;
  for (int i = 0; i < 2000; ++i) eps = da.update(std::exp(-eps));
  EXPECT_NEAR(da.final_step_size(), -std::log(0.65), 0.02);
}

TEST(Nuts, CorrelatedGaussianCovariance) {
  Eigen::Matrix2d cov;
  cov << 1.0, 0.8, 0.8, 1.0;
  NutsConfig cfg;
  cfg.warmup = 500;
  cfg.n_samples = 1000;
  const PosteriorSamples s = nuts_sample(gaussian(cov.inverse()), Eigen::Vector2d(0.5, 0.5), cfg, 21);
  ASSERT_EQ(s.size(), 1000u);
  const Eigen::MatrixXd c = sample_cov(s.samples);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(c(i, j), cov(i, j), 0.15 * std::abs(cov(i, j))) << i << j;
  }
  EXPECT_EQ(s.diagnostics.divergences, 0u);
  EXPECT_FALSE(s.diagnostics.divergence_warning);
  std::printf("post-warmup acceptance %.3f\n", s.diagnostics.acceptance_rate);
}

TEST(Nuts, AdaptedAcceptanceNearTarget) {
  const Eigen::VectorXd sd = Eigen::VectorXd::LinSpaced(50, -2.0, 2.0).array().exp();
  const LogDensityFn f = gaussian(sd.array().square().inverse().matrix().asDiagonal());
  NutsConfig cfg;
  cfg.warmup = 500;
  cfg.n_samples = 1000;
  const PosteriorSamples s = nuts_sample(f, Eigen::VectorXd::Zero(50), cfg, 21);
  EXPECT_GE(s.diagnostics.acceptance_rate, 0.55);
  EXPECT_LE(s.diagnostics.acceptance_rate, 0.75);
  EXPECT_NEAR(s.diagnostics.warmup_acceptance_rate, 0.65, 0.1);
}

TEST(Nuts, AdaptsMassToScales) {
  Eigen::Vector3d sd(0.01, 1.0, 30.0);
  const LogDensityFn f = gaussian(sd.array().square().inverse().matrix().asDiagonal());
  NutsConfig cfg;
  cfg.warmup = 400;
  cfg.n_samples = 800;
  const PosteriorSamples s = nuts_sample(f, Eigen::Vector3d::Zero(), cfg, 4);
  const Eigen::MatrixXd c = sample_cov(s.samples);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(std::sqrt(c(i, i)) / sd[i], 1.0, 0.15) << i;
  ASSERT_EQ(s.diagnostics.mass_diag.size(), 3);
  EXPECT_GT(s.diagnostics.mass_diag[0], 100.0 * s.diagnostics.mass_diag[2]);
}

TEST(Nuts, DepthCapHonored) {
  NutsConfig cfg;
  cfg.max_tree_depth = 3;
  cfg.warmup = 50;
  cfg.n_samples = 100;
  cfg.initial_step_size = 1e-3;
  cfg.adapt_mass = false;
  const PosteriorSamples s = nuts_sample(isotropic(2), Eigen::Vector2d(1, 1), cfg, 2);
  for (std::size_t n : s.diagnostics.n_leapfrog) EXPECT_LE(n, 7u);
  for (std::size_t d : s.diagnostics.tree_depth) EXPECT_LE(d, 3u);

  cfg.max_tree_depth = 6;
  cfg.warmup = 0;
  const PosteriorSamples t = nuts_sample(isotropic(2), Eigen::Vector2d(1, 1), cfg, 2);
  std::size_t max_n = 0;
  for (std::size_t n : t.diagnostics.n_leapfrog) max_n = std::max(max_n, n);
  EXPECT_EQ(max_n, 63u);
}

TEST(Nuts, RecordedTreesHaveNoInternalUTurn) {
  Eigen::Matrix2d cov;
  cov << 1.0, 0.6, 0.6, 2.0;
  NutsConfig cfg;
  cfg.warmup = 100;
  cfg.n_samples = 200;
  cfg.record_trees = true;
  const NutsResult r = nuts_sample_recorded(gaussian(cov.inverse()), Eigen::Vector2d(0, 0), cfg, 8);
  ASSERT_EQ(r.trees.size(), 200u);
  std::size_t u_turns = 0;
  for (const TrajectoryRecord& t : r.trees) {
    const std::size_t n = t.positions.size();
    ASSERT_EQ(n, std::size_t{1} << t.depth);
    if (t.u_turn) ++u_turns;
    // Every aligned proper subtree must have passed the criterion.
    for (std::size_t len = 2; len < n; len *= 2) {
      for (std::size_t start = 0; start < n; start += len) {
        Eigen::VectorXd rho = Eigen::VectorXd::Zero(2);
        for (std::size_t k = start; k < start + len; ++k) rho += t.momenta[k];
        EXPECT_FALSE(no_u_turn_stop(rho, t.momenta[start], t.momenta[start + len - 1], t.inv_mass));
      }
    }
    // Consecutive leapfrog states are one step apart in the chosen direction.
    for (std::size_t k = 1; k < n; ++k) EXPECT_GT((t.positions[k] - t.positions[k - 1]).norm(), 0.0);
  }
  EXPECT_GT(u_turns, 150u);
}

TEST(Nuts, BitReproducible) {
  NutsConfig cfg;
  cfg.warmup = 60;
  cfg.n_samples = 40;
  const auto a = nuts_sample(isotropic(3), Eigen::VectorXd::Ones(3), cfg, 5);
  const auto b = nuts_sample(isotropic(3), Eigen::VectorXd::Ones(3), cfg, 5);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.diagnostics.n_leapfrog, b.diagnostics.n_leapfrog);
}

TEST(Nuts, PersistentDivergenceWarning) {
  // Funnel-like cliff: the density becomes non-finite beyond |x| > 0.5.
  LogDensityFn f = [](ParamView x) {
    LossAndGradient lg;
    lg.gradient = -x;
    lg.value = x.cwiseAbs().maxCoeff() > 0.5 ? std::nan("") : -0.5 * x.squaredNorm();
    return lg;
  };
  NutsConfig cfg;
  cfg.warmup = 0;
  cfg.n_samples = 100;
  cfg.initial_step_size = 0.4;
  cfg.adapt_mass = false;
  const PosteriorSamples s = nuts_sample(f, Eigen::Vector2d(0, 0), cfg, 1);
  EXPECT_GT(s.diagnostics.divergences, 25u);
  EXPECT_TRUE(s.diagnostics.divergence_warning);
  EXPECT_TRUE(s.samples.allFinite());
}

TEST(StepSizeHeuristic, CrossesHalfAcceptance) {
  const double eps = find_reasonable_step_size(isotropic(5, 0.1), Eigen::VectorXd::Zero(5), 1.0, {}, 3);
  EXPECT_LT(eps, 1.0);
  EXPECT_GT(eps, 0.01);
}

TEST(SamplesIo, RoundTrip) {
  NutsConfig cfg;
  cfg.warmup = 30;
  cfg.n_samples = 20;
  const auto s = nuts_sample(isotropic(3), Eigen::VectorXd::Ones(3), cfg, 5);
  const auto path = (std::filesystem::temp_directory_path() / "pinnuq_samples_test.bin").string();
  save_samples(path, s);
  const auto t = load_samples(path);
  EXPECT_EQ(t.samples, s.samples);
  EXPECT_EQ(t.diagnostics.step_size, s.diagnostics.step_size);
  EXPECT_EQ(t.diagnostics.n_leapfrog, s.diagnostics.n_leapfrog);
  EXPECT_EQ(t.diagnostics.mass_diag, s.diagnostics.mass_diag);
  EXPECT_EQ(t.diagnostics.sampler, "nuts");
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());
  EXPECT_THROW(load_samples(path), Error);
}

// ---------------------------------------------------------------------------

struct SmallRans {
  NetworkSpec net{std::vector<std::size_t>{2, 6, 5}};
  ParamVector params;
  PointSet colloc;
  Problem problem = RansProblem{100.0};
  TemperedPosteriorSpec spec = TemperedPosteriorSpec::untempered(1.0, 0.05, 0.3);

  SmallRans() {
    std::mt19937_64 rng(3);
    auto [s, p] = testing::random_network({2, 6, 5}, rng);
    net = s;
    params = p;
    colloc = PointSet::Random(2, 300);
  }
};

TEST(Subsample, FullSizeEqualsFullLikelihood) {
  SmallRans c;
  const double full = log_lik_pde(c.net, c.params, c.colloc, c.spec.sigma_pde, c.problem);
  const double sub = subsampled_physics_logp(c.spec, c.net, c.params, c.colloc, 300, 7, c.problem);
  EXPECT_NEAR(sub, full, 1e-12 * std::abs(full));
}

TEST(Subsample, HomogeneousResidualsExact) {
  // Constant network: residual (fx, fy, 0) identical at every point.
  NetworkSpec net({2, 4, 5});
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(net.param_count()));
  p.tail(5) << 0.1, 0.2, 0.3, 0.7, -0.4;
  const PointSet x = PointSet::Random(2, 200);
  const auto spec = TemperedPosteriorSpec::untempered(1.0, 0.05, 0.3);
  const double full = log_lik_pde(net, p, x, spec.sigma_pde, RansProblem{});
  for (std::size_t n : {1u, 13u, 50u, 199u}) {
    EXPECT_NEAR(subsampled_physics_logp(spec, net, p, x, n, n, RansProblem{}), full, 1e-12 * std::abs(full));
  }
}

TEST(Subsample, UnbiasedOverDraws) {
  SmallRans c;
  const double full = log_lik_pde(c.net, c.params, c.colloc, c.spec.sigma_pde, c.problem);
  std::vector<double> v;
  for (std::uint64_t s = 0; s < 200; ++s) v.push_back(subsampled_physics_logp(c.spec, c.net, c.params, c.colloc, 30, s, c.problem));
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= 200.0;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double se = std::sqrt(var / 199.0 / 200.0);
  EXPECT_LT(std::abs(mean - full), 3.0 * se);
}

TEST(Subsample, TemperedWeightUsesFullCount) {
  SmallRans c;
  TemperedPosteriorSpec spec = c.spec;
  spec.beta_r = 0.5;
  const PointSet sub = draw_collocation_subsample(c.colloc, 40, 9);
  const double mean_ll = log_lik_pde(c.net, c.params, sub, spec.sigma_pde, c.problem) / 40.0;
  EXPECT_NEAR(subsampled_physics_logp(spec, c.net, c.params, c.colloc, 40, 9, c.problem), std::sqrt(300.0) * mean_ll,
              1e-12 * std::abs(mean_ll) * 20);
}

TEST(Subsample, DrawIsFixedAndDistinct) {
  const PointSet x = Eigen::RowVectorXd::LinSpaced(100, 0.0, 99.0);
  const PointSet a = draw_collocation_subsample(x, 30, 4);
  EXPECT_EQ(a, draw_collocation_subsample(x, 30, 4));
  std::vector<double> v(a.data(), a.data() + a.size());
  std::sort(v.begin(), v.end());
  EXPECT_EQ(std::adjacent_find(v.begin(), v.end()), v.end());
  EXPECT_THROW(draw_collocation_subsample(x, 101, 1), Error);
}

TEST(PosteriorTarget, MatchesTemperedLogPosteriorAndGradient) {
  SmallRans c;
  ObservationSet obs;
  obs.points = PointSet::Random(2, 8);
  obs.components = {{0, "U", Eigen::VectorXd::Random(8)}, {3, "fx", Eigen::VectorXd::Random(8)}};
  TemperedPosteriorSpec spec;
  const LogDensityFn f = tempered_posterior_target(c.net, obs, c.colloc, 300, spec, c.problem);
  const LossAndGradient lg = f(c.params);
  EXPECT_NEAR(lg.value, tempered_log_posterior(spec, c.net, c.params, obs, c.colloc, c.problem),
              1e-10 * std::abs(lg.value));
  const Eigen::VectorXd fd = testing::fd_gradient(
      [&](const Eigen::VectorXd& t) { return tempered_log_posterior(spec, c.net, t, obs, c.colloc, c.problem); },
      c.params, 1e-6);
  EXPECT_LT(testing::max_rel_error(lg.gradient, fd), 1e-5);
}

TEST(Ess, IidAndAutoregressive) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  const Eigen::Index n = 20000;
  Eigen::VectorXd iid(n), ar(n);
  const double rho = 0.6;
  double x = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    iid[i] = g(rng);
    x = rho * x + std::sqrt(1 - rho * rho) * g(rng);
    ar[i] = x;
  }
  EXPECT_NEAR(effective_sample_size(iid) / n, 1.0, 0.1);
  EXPECT_NEAR(effective_sample_size(ar) / n, (1 - rho) / (1 + rho), 0.05);
  EXPECT_NEAR(mcse_mean(iid), 1.0 / std::sqrt(n), 0.1 / std::sqrt(n));
  EXPECT_EQ(effective_sample_size(Eigen::VectorXd::Constant(10, 2.0)), 10.0);
  EXPECT_THROW(effective_sample_size(Eigen::VectorXd::Zero(3)), Error);
}

}  // namespace
}  // namespace pinnuq
