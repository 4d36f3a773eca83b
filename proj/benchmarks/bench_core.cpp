#include <benchmark/benchmark.h>

#include "pinnuq/autodiff.hpp"
#include "pinnuq/data.hpp"
#include "pinnuq/posterior.hpp"
#include "pinnuq/samplers.hpp"
#include "pinnuq/trainers.hpp"
#include "pinnuq/uq.hpp"

namespace {

using namespace pinnuq;

NetworkSpec rans_net() {
  NetworkSpec n({2, 64, 64, 64, 64, 64, 5});
  n.normalization.shift = {3.0, 0.0};
  n.normalization.scale = {5.0, 3.0};
  return n;
}

NetworkSpec vdp_net() {
  NetworkSpec n({1, 50, 50, 1});
  n.normalization.shift = {0.75};
  n.normalization.scale = {0.75};
  return n;
}

void BM_ForwardRans(benchmark::State& state) {
  const NetworkSpec net = rans_net();
  const ParamVector p = init_params(net, 1);
  const PointSet x = PointSet::Random(2, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, p, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardRans)->Arg(100)->Arg(1000);

void BM_RansResidualDerivatives(benchmark::State& state) {
  const NetworkSpec net = rans_net();
  const ParamVector p = init_params(net, 1);
  const PointSet x = PointSet::Random(2, state.range(0));
  const DerivativeRequest req = residual_request(RansProblem{});
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_with_input_derivatives(net, p, x, req));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RansResidualDerivatives)->Arg(100)->Arg(1000);

void BM_VdpPosteriorGradient(benchmark::State& state) {
  const ExperimentDataset d = make_vdp_dataset(VdpDataConfig{}, 1);
  const NetworkSpec net = vdp_net();
  const ParamVector p = init_params(net, 2);
  const auto target = tempered_posterior_target(net, d.observations, d.collocation, 120,
                                                TemperedPosteriorSpec::untempered(1.0, 0.05, 0.05),
                                                VdpProblem{{1.0, 15.0}, 1e-4});
  for (auto _ : state) benchmark::DoNotOptimize(target(p));
}
BENCHMARK(BM_VdpPosteriorGradient)->Unit(benchmark::kMillisecond);

void BM_RansPosteriorGradient(benchmark::State& state) {
  RansDataConfig cfg;
  const ExperimentDataset d = make_rans_dataset(ManufacturedRans::wake_like(), cfg, 1);
  const NetworkSpec net = rans_net();
  const ParamVector p = init_params(net, 2);
  const PointSet sub = draw_collocation_subsample(d.collocation, static_cast<std::size_t>(state.range(0)), 3);
  const auto target = tempered_posterior_target(net, d.observations, sub, 2000, TemperedPosteriorSpec{},
                                                RansProblem{3900.0});
  for (auto _ : state) benchmark::DoNotOptimize(target(p));
}
BENCHMARK(BM_RansPosteriorGradient)->Arg(250)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_HmcGaussian(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const LogDensityFn f = [](ParamView x) { return LossAndGradient{-0.5 * x.squaredNorm(), -x}; };
  HmcConfig cfg;
  cfg.step_size = 0.1;
  cfg.n_leapfrog = 20;
  cfg.burn_in = 100;
  cfg.n_samples = 100;
  for (auto _ : state) benchmark::DoNotOptimize(hmc_sample(f, Eigen::VectorXd::Zero(d), cfg, 1));
}
BENCHMARK(BM_HmcGaussian)->Arg(10)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_NutsGaussian(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const LogDensityFn f = [](ParamView x) { return LossAndGradient{-0.5 * x.squaredNorm(), -x}; };
  NutsConfig cfg;
  cfg.warmup = 100;
  cfg.n_samples = 100;
  for (auto _ : state) benchmark::DoNotOptimize(nuts_sample(f, Eigen::VectorXd::Zero(d), cfg, 1));
}
BENCHMARK(BM_NutsGaussian)->Arg(10)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_PredictFromSamples(benchmark::State& state) {
  const NetworkSpec net = vdp_net();
  Eigen::MatrixXd s(state.range(0), static_cast<Eigen::Index>(net.param_count()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) = init_params(net, static_cast<std::uint64_t>(i)).transpose();
  const PointSet x = PointSet::Random(1, 1001);
  for (auto _ : state) benchmark::DoNotOptimize(predict_from_samples(net, s, x));
}
BENCHMARK(BM_PredictFromSamples)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Calibrate(benchmark::State& state) {
  const auto n = state.range(0);
  PredictiveSummary s;
  s.mean = Eigen::MatrixXd::Random(1, n);
  s.std = Eigen::MatrixXd::Random(1, n).cwiseAbs().array() + 0.1;
  s.samples = 100;
  const std::vector<EvalVariable> vars{{"u", 0, Eigen::VectorXd::Random(n), false}};
  for (auto _ : state) benchmark::DoNotOptimize(calibrate(s, vars, {}));
}
BENCHMARK(BM_Calibrate)->Arg(1001)->Arg(100000);

void BM_IntegrateVdp(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(integrate_vdp(VdpParams{}, 1.0, 0.0, 1.5, 1e-10, static_cast<std::size_t>(state.range(0))));
  }
}
BENCHMARK(BM_IntegrateVdp)->Arg(1001)->Arg(180001)->Unit(benchmark::kMillisecond);

void BM_AdamStep(benchmark::State& state) {
  const auto n = state.range(0);
  ParamVector p = ParamVector::Random(n);
  const Eigen::VectorXd g = Eigen::VectorXd::Random(n);
  AdamState st(static_cast<std::size_t>(n));
  for (auto _ : state) adam_step(st, p, g, 1e-3, 0.01);
}
BENCHMARK(BM_AdamStep)->Arg(17157);

}  // namespace

BENCHMARK_MAIN();
