#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pinnuq/error.hpp"
#include "pinnuq/rng.hpp"
#include "pinnuq/trainers.hpp"

namespace pinnuq {
namespace {

TEST(Adam, ZeroGradientLeavesParams) {
  ParamVector p = ParamVector::LinSpaced(5, -1, 1);
  const ParamVector before = p;
  AdamState s(5);
  adam_step(s, p, Eigen::VectorXd::Zero(5), 0.1, 0.0);
  EXPECT_EQ(p, before);
}

TEST(Adam, MinimizesOneDimensionalQuadratic) {
  ParamVector p = ParamVector::Ones(1);
  AdamState s(1);
  for (int i = 0; i < 500; ++i) adam_step(s, p, 2.0 * p, 0.1, 0.0);
  EXPECT_LT(std::abs(p[0]), 1e-3);
}

TEST(Adam, DecoupledDecayOnly) {
  ParamVector p = ParamVector::LinSpaced(4, 1, 4);
  const ParamVector before = p;
  AdamState s(4);
  adam_step(s, p, Eigen::VectorXd::Zero(4), 0.01, 0.5);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p[i], before[i] * (1.0 - 0.01 * 0.5));
}

TEST(Adam, RejectsNonFiniteGradient) {
  ParamVector p = ParamVector::Zero(2);
  AdamState s(2);
  Eigen::VectorXd g(2);
  g << 1.0, std::nan("");
  EXPECT_THROW(adam_step(s, p, g, 0.1, 0.0), Error);
}

TEST(Schedules, CosineRamp) {
  EXPECT_EQ(cosine_ramp(0.0, 100.0), 0.0);
  EXPECT_NEAR(cosine_ramp(50.0, 100.0), 0.5, 1e-15);
  EXPECT_EQ(cosine_ramp(100.0, 100.0), 1.0);
  EXPECT_EQ(cosine_ramp(250.0, 100.0), 1.0);
  double prev = 0.0;
  for (int t = 0; t <= 100; ++t) {
    const double w = cosine_ramp(t, 100.0);
    EXPECT_GE(w, prev);
    prev = w;
  }
}

TEST(Schedules, CosineDecay) {
  EXPECT_EQ(cosine_decay(1e-3, 0, 100), 1e-3);
  EXPECT_NEAR(cosine_decay(1e-3, 50, 100), 5e-4, 1e-18);
  EXPECT_EQ(cosine_decay(1e-3, 100, 100), 0.0);
}

TEST(Lbfgs, QuadraticConvergesQuickly) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Eigen::MatrixXd B(5, 5);
  for (Eigen::Index i = 0; i < 25; ++i) B.data()[i] = g(rng);
  const Eigen::MatrixXd A = B * B.transpose() + Eigen::MatrixXd::Identity(5, 5);
  ValueGradientFn fn = [&](ParamView x) {
    return LossAndGradient{0.5 * x.dot(A * x), A * x};
  };
  LbfgsOptions opt;
  opt.max_iters = 50;
  opt.grad_tol = 1e-8;
  const LbfgsResult r = lbfgs_minimize(fn, ParamVector::Constant(5, 3.0), opt);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.grad_norm, 1e-8);
  EXPECT_LE(r.iterations, 50u);
}

TEST(Lbfgs, Rosenbrock) {
  ValueGradientFn fn = [](ParamView x) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    Eigen::VectorXd gr(2);
    gr << -2.0 * a - 400.0 * x[0] * b, 200.0 * b;
    return LossAndGradient{a * a + 100.0 * b * b, gr};
  };
  ParamVector x0(2);
  x0 << -1.2, 1.0;
  LbfgsOptions opt;
  opt.max_iters = 200;
  const LbfgsResult r = lbfgs_minimize(fn, x0, opt);
  EXPECT_LT(r.value, 1e-6);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
}

TEST(Lbfgs, StationaryStartReturnsImmediately) {
  ValueGradientFn fn = [](ParamView x) { return LossAndGradient{x.squaredNorm(), 2.0 * x}; };
  const LbfgsResult r = lbfgs_minimize(fn, ParamVector::Zero(3));
  EXPECT_EQ(r.iterations, 0u);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.params, ParamVector::Zero(3));
}

TEST(Lbfgs, AcceptedStepsSatisfyStrongWolfe) {
  // Record every evaluation; the accepted iterates are the history values,
  // each preceded by its line-search trials.
  std::vector<std::pair<ParamVector, LossAndGradient>> evals;
  ValueGradientFn fn = [&](ParamView x) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    Eigen::VectorXd gr(2);
    gr << -2.0 * a - 400.0 * x[0] * b, 200.0 * b;
    LossAndGradient lg{a * a + 100.0 * b * b, gr};
    evals.emplace_back(x, lg);
    return lg;
  };
  ParamVector x0(2);
  x0 << -1.2, 1.0;
  LbfgsOptions opt;
  opt.max_iters = 40;
  const LbfgsResult r = lbfgs_minimize(fn, x0, opt);
  // Walk the evaluations: an accepted point is the one whose value appears
  // next in the history.
  std::size_t h = 1;
  ParamVector x_prev = evals.front().first;
  LossAndGradient prev = evals.front().second;
  for (std::size_t i = 1; i < evals.size() && h < r.history.size(); ++i) {
    if (evals[i].second.value != r.history[h]) continue;
    const Eigen::VectorXd s = evals[i].first - x_prev;
    const double dphi0 = prev.gradient.dot(s);
    EXPECT_LT(dphi0, 0.0);
    EXPECT_LE(evals[i].second.value, prev.value + 1e-4 * dphi0);
    EXPECT_LE(std::abs(evals[i].second.gradient.dot(s)), 0.9 * std::abs(dphi0) * (1 + 1e-12));
    x_prev = evals[i].first;
    prev = evals[i].second;
    ++h;
  }
  EXPECT_EQ(h, r.history.size());
}

TEST(Lbfgs, LineSearchFailureIsFlagged) {
  // A loss whose gradient lies: descent direction for the model but not for
  // the function, so no step satisfies sufficient decrease.
  ValueGradientFn fn = [](ParamView x) { return LossAndGradient{x.squaredNorm(), -2.0 * x}; };
  const LbfgsResult r = lbfgs_minimize(fn, ParamVector::Ones(2));
  EXPECT_TRUE(r.line_search_failed);
  EXPECT_EQ(r.params, ParamVector::Ones(2));
}

/// Affine network R^2 -> R^5 (no hidden layer): outputs are linear in the
/// parameters.  Constant U, V, f and linear P with f = -grad P satisfy the
/// RANS residuals exactly.
struct LinearRans {
  NetworkSpec net{std::vector<std::size_t>{2, 5}};
  ParamVector truth;
  ObservationSet obs;
  PointSet colloc;

  LinearRans() {
    truth = ParamVector::Zero(15);
    // W is 5x2 column-major: W(k, 0) at k, W(k, 1) at 5 + k; bias at 10 + k.
    truth[rans::kP] = 0.3;       // dP/dx
    truth[5 + rans::kP] = -0.2;  // dP/dy
    truth[10 + rans::kU] = 1.0;
    truth[10 + rans::kV] = 0.1;
    truth[10 + rans::kFx] = -0.3;
    truth[10 + rans::kFy] = 0.2;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    obs.points = PointSet(2, 30);
    for (Eigen::Index i = 0; i < obs.points.size(); ++i) obs.points.data()[i] = u(rng);
    const Eigen::MatrixXd out = forward(net, truth, obs.points);
    for (std::size_t k : {rans::kU, rans::kV, rans::kFx, rans::kFy}) {
      obs.components.push_back({k, "c", out.row(static_cast<Eigen::Index>(k)).transpose()});
    }
    colloc = PointSet(2, 40);
    for (Eigen::Index i = 0; i < colloc.size(); ++i) colloc.data()[i] = u(rng);
  }
};

TEST(MapPretraining, RecoversLinearModel) {
  LinearRans c;
  TemperedPosteriorSpec spec;
  spec.sigma_prior = 1e4;
  StagePlan plan;
  plan.stage_a_iters = 300;
  plan.stage_b_iters = 300;
  plan.ramp_window = 150;
  plan.stage_c_iters = 500;
  plan.pde_minibatch = 20;
  plan.lr_a = plan.lr_b = 1e-2;
  const MapResult r = run_map_pretraining(c.net, ParamVector::Zero(15), c.obs, c.colloc, spec, RansProblem{100.0}, plan, 3);
  EXPECT_LT((r.params - c.truth).cwiseAbs().maxCoeff(), 1e-6);
  ASSERT_FALSE(r.history.empty());
  EXPECT_EQ(r.history.front().stage, "A");
}

TEST(MapPretraining, StageBStartsWithStageALoss) {
  LinearRans c;
  const TemperedPosteriorSpec spec;
  const ParamVector p = ParamVector::Constant(15, 0.1);
  EXPECT_EQ(cosine_ramp(0.0, 5000.0), 0.0);
  const LossAndGradient a = map_stage_objective(c.net, p, c.obs, c.colloc, 40, spec, RansProblem{}, 0.0);
  const double ref = -(log_prior(p, spec.sigma_prior) +
                       std::pow(30.0, spec.beta_d) / 30.0 * log_lik_velocity(c.net, p, c.obs, 0.05, 0.05) +
                       std::pow(30.0, spec.beta_f) / 30.0 * log_lik_reynolds(c.net, p, c.obs, 0.05, 0.05));
  EXPECT_NEAR(a.value, ref, 1e-12 * std::abs(ref));
}

TEST(MapPretraining, StageCNeverIncreasesObjective) {
  LinearRans c;
  TemperedPosteriorSpec spec;
  const Problem prob = RansProblem{100.0};
  ValueGradientFn fn = [&](ParamView th) { return neg_log_posterior(c.net, th, c.obs, c.colloc, spec, prob); };
  const LbfgsResult r = lbfgs_minimize(fn, ParamVector::Constant(15, 0.5), LbfgsOptions{});
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
  const double direct = -tempered_log_posterior(spec, c.net, r.params, c.obs, c.colloc, prob);
  EXPECT_NEAR(r.value, direct, 1e-9 * std::max(1.0, std::abs(direct)));
}

TEST(MapPretraining, DivergenceCarriesStage) {
  LinearRans c;
  StagePlan plan;
  plan.stage_a_iters = 2;
  plan.stage_b_iters = 2;
  plan.ramp_window = 1;
  plan.stage_c_iters = 0;
  ParamVector bad = ParamVector::Zero(15);
  bad[0] = std::nan("");
  try {
    run_map_pretraining(c.net, bad, c.obs, c.colloc, {}, RansProblem{}, plan, 1);
    FAIL();
  } catch (const Error& e) {
    ASSERT_TRUE(e.stage.has_value());
    EXPECT_EQ(*e.stage, "A");
    EXPECT_EQ(*e.iteration, 0u);
  }
}

struct SmallVdp {
  NetworkSpec net{std::vector<std::size_t>{1, 8, 8, 1}};
  ObservationSet obs;
  PointSet colloc;
  Problem problem = VdpProblem{{1.0, 2.0}, 1.0};

  SmallVdp() {
    obs.points = PointSet(1, 12);
    Eigen::VectorXd u(12);
    for (int i = 0; i < 12; ++i) {
      obs.points(0, i) = i / 11.0;
      u[i] = std::cos(2.0 * obs.points(0, i));
    }
    obs.components = {{0, "u", u}};
    colloc = PointSet(1, 20);
    for (int i = 0; i < 20; ++i) colloc(0, i) = i / 19.0;
  }
};

TEST(Ensemble, ZeroRepulsionEqualsIndependentRuns) {
  SmallVdp c;
  EnsembleConfig cfg;
  cfg.members = 3;
  cfg.lambda_rep = 0.0;
  cfg.train.epochs = 40;
  cfg.train.lr = 1e-2;
  cfg.train.pde_minibatch = 10;
  const EnsembleResult ens = train_repulsive_ensemble(c.net, c.obs, c.colloc, c.problem, cfg, 77);
  for (std::size_t m = 0; m < 3; ++m) {
    const std::uint64_t s = derive_seed(77, m);
    const PinnTrainResult single = train_pinn(c.net, init_params(c.net, s), c.obs, c.colloc, c.problem, cfg.train, s);
    EXPECT_EQ(ens.members[m], single.params);
  }
}

TEST(Ensemble, PureParameterRepulsionSpreadsMembers) {
  NetworkSpec net({1, 3, 1});
  ObservationSet none;
  none.points = PointSet(1, 0);
  EnsembleConfig cfg;
  cfg.members = 2;
  cfg.variant = RepulsionVariant::kParameterSpace;
  cfg.bandwidth = 2.0;
  cfg.train.lambda_pde = 0.0;
  cfg.train.ramp_fraction = 0.0;
  cfg.train.cosine_decay = false;
  cfg.train.lr = 1e-2;
  double prev = -1.0;
  for (std::size_t epochs = 1; epochs <= 30; ++epochs) {
    cfg.train.epochs = epochs;
    const EnsembleResult r = train_repulsive_ensemble(net, none, PointSet(1, 0), VdpProblem{}, cfg, 5);
    const double d = (r.members[0] - r.members[1]).norm();
    EXPECT_GT(d, prev);
    prev = d;
  }
}

TEST(Ensemble, FunctionSpaceRepulsionKeepsMembersApart) {
  SmallVdp c;
  EnsembleConfig cfg;
  cfg.members = 4;
  cfg.train.epochs = 150;
  cfg.train.lr = 1e-2;
  cfg.repulsion_points = Eigen::RowVectorXd::LinSpaced(16, 0.0, 1.0);
  const EnsembleResult r = train_repulsive_ensemble(c.net, c.obs, c.colloc, c.problem, cfg, 8);
  EXPECT_GT(r.bandwidth, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      const double d = (forward(c.net, r.members[i], cfg.repulsion_points) -
                        forward(c.net, r.members[j], cfg.repulsion_points)).norm();
      EXPECT_GT(d, 0.0);
    }
  }
}

TEST(Ensemble, RequiresTwoMembers) {
  SmallVdp c;
  EnsembleConfig cfg;
  cfg.members = 1;
  EXPECT_THROW(train_repulsive_ensemble(c.net, c.obs, c.colloc, c.problem, cfg, 1), Error);
}

TEST(McDropoutTraining, ZeroEpochsAndReproducibility) {
  SmallVdp c;
  NetworkSpec net = c.net;
  net.dropout_rate = 0.05;
  const ParamVector init = init_params(net, 3);
  PinnTrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(train_mc_dropout(net, init, c.obs, c.colloc, c.problem, cfg, 1).params, init);
  cfg.epochs = 30;
  cfg.lr = 1e-2;
  const auto a = train_mc_dropout(net, init, c.obs, c.colloc, c.problem, cfg, 1);
  const auto b = train_mc_dropout(net, init, c.obs, c.colloc, c.problem, cfg, 1);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, train_mc_dropout(net, init, c.obs, c.colloc, c.problem, cfg, 2).params);
  EXPECT_THROW(train_mc_dropout(c.net, init, c.obs, c.colloc, c.problem, cfg, 1), Error);
}

TEST(PinnTraining, ReducesLoss) {
  SmallVdp c;
  c.problem = VdpProblem{{0.0, 2.0}, 1.0};
  PinnTrainConfig cfg;
  cfg.epochs = 300;
  cfg.lr = 1e-2;
  cfg.history_stride = 1;
  const ParamVector init = init_params(c.net, 2);
  const PinnTrainResult r = train_pinn(c.net, init, c.obs, c.colloc, c.problem, cfg, 4);
  EXPECT_LT(pinn_loss(c.net, r.params, c.obs, c.colloc, 1.0, c.problem),
            0.1 * pinn_loss(c.net, init, c.obs, c.colloc, 1.0, c.problem));
  EXPECT_EQ(r.history.size(), 300u);
}

}  // namespace
}  // namespace pinnuq
