#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "pinnuq/error.hpp"
#include "pinnuq/network.hpp"
#include "support/oracles.hpp"

namespace pinnuq {
namespace {

std::size_t closed_form_count(const std::vector<std::size_t>& w) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) n += w[i] * w[i + 1] + w[i + 1];
  return n;
}

TEST(Network, ParamCounts) {
  EXPECT_EQ(init_params(NetworkSpec({1, 1}), 0).size(), 2);
  EXPECT_EQ(NetworkSpec({1, 50, 50, 1}).param_count(), 2701u);
  const std::vector<std::size_t> rans{2, 64, 64, 64, 64, 64, 5};
  EXPECT_EQ(NetworkSpec(rans).param_count(), closed_form_count(rans));
  EXPECT_EQ(NetworkSpec(rans).param_count(), 17157u);
}

TEST(Network, InitIsSeededAndScaled) {
  NetworkSpec spec({2, 40, 30, 3});
  const ParamVector a = init_params(spec, 17);
  EXPECT_EQ(a, init_params(spec, 17));
  EXPECT_NE(a, init_params(spec, 18));
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
    const auto off = static_cast<Eigen::Index>(spec.weight_offset(l));
    const auto w = a.segment(off, static_cast<Eigen::Index>(in * out));
    EXPECT_LE(w.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(static_cast<double>(in)));
    EXPECT_EQ(a.segment(off + static_cast<Eigen::Index>(in * out), static_cast<Eigen::Index>(out)).cwiseAbs().maxCoeff(),
              0.0);
  }
}

TEST(Network, ValidateRejectsBadSpecs) {
  EXPECT_THROW(NetworkSpec({1}).validate(), Error);
  EXPECT_THROW(NetworkSpec({1, 0, 1}).validate(), Error);
  EXPECT_THROW(NetworkSpec({1, 4, 1}, 1.0).validate(), Error);
  EXPECT_THROW(NetworkSpec({1, 4, 1}, -0.1).validate(), Error);
  NetworkSpec bad({2, 4, 1});
  bad.normalization.scale[1] = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_NO_THROW(NetworkSpec({1, 4, 1}, 0.5).validate());
}

TEST(Network, ForwardMatchesScalarLoop) {
  std::mt19937_64 rng(3);
  auto [spec, p] = testing::random_network({2, 9, 4, 5}, rng);
  PointSet x = PointSet::Random(2, 8) * 2.0;
  const Eigen::MatrixXd out = forward(spec, p, x);
  ASSERT_EQ(out.rows(), 5);
  ASSERT_EQ(out.cols(), 8);
  for (Eigen::Index j = 0; j < 8; ++j) {
    const auto ref = testing::naive_forward(spec, p, {x(0, j), x(1, j)});
    for (Eigen::Index k = 0; k < 5; ++k) EXPECT_NEAR(out(k, j), ref[static_cast<std::size_t>(k)], 1e-13);
  }
}

TEST(Network, ZeroRateStochasticEqualsOff) {
  NetworkSpec spec({1, 10, 10, 1});
  const ParamVector p = init_params(spec, 1);
  PointSet x = PointSet::Random(1, 20);
  EXPECT_EQ(forward(spec, p, x, DropoutMode::stochastic(5)), forward(spec, p, x, DropoutMode::off()));
}

TEST(Network, ZeroWeightsGiveOutputBiasUnderAnyMask) {
  NetworkSpec spec({1, 6, 2}, 0.5);
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  p.tail(2) << 1.25, -0.5;
  PointSet x = PointSet::Random(1, 30);
  const Eigen::MatrixXd out = forward(spec, p, x, DropoutMode::stochastic(9));
  EXPECT_TRUE((out.row(0).array() == 1.25).all());
  EXPECT_TRUE((out.row(1).array() == -0.5).all());
}

TEST(Network, StochasticForwardIsSeeded) {
  NetworkSpec spec({1, 16, 16, 1}, 0.2);
  const ParamVector p = init_params(spec, 2);
  PointSet x = PointSet::Random(1, 10);
  EXPECT_EQ(forward(spec, p, x, DropoutMode::stochastic(4)), forward(spec, p, x, DropoutMode::stochastic(4)));
  EXPECT_NE(forward(spec, p, x, DropoutMode::stochastic(4)), forward(spec, p, x, DropoutMode::stochastic(5)));
  EXPECT_EQ(forward(spec, p, x), forward(spec, p, x));
}

TEST(Network, DropoutMeanMatchesDeterministicOutput) {
  // One hidden layer: the output is linear in the mask, so inverted dropout
  // is unbiased.
  NetworkSpec spec({1, 2, 1}, 0.5);
  ParamVector p(7);
  p << 0.8, -1.1, 0.3, 0.2, 1.5, -0.7, 0.1;
  const std::size_t n = 10000;
  PointSet x = PointSet::Constant(1, static_cast<Eigen::Index>(n), 0.4);
  const Eigen::VectorXd draws = forward(spec, p, x, DropoutMode::stochastic(77)).row(0).transpose();
  const double det = forward(spec, p, x.leftCols(1))(0, 0);
  const double mean = draws.mean();
  const double se = std::sqrt((draws.array() - mean).square().sum() / (n - 1) / n);
  EXPECT_LT(std::abs(mean - det), 3.0 * se);
}

TEST(Network, MasksHaveInvertedScaling) {
  NetworkSpec spec({1, 5, 5, 1}, 0.25);
  const DropoutMasks m = sample_dropout_masks(spec, 40, 3);
  ASSERT_EQ(m.layers.size(), 2u);
  for (const auto& layer : m.layers) {
    EXPECT_EQ(layer.rows(), 5);
    EXPECT_EQ(layer.cols(), 40);
    EXPECT_TRUE(((layer == 0.0) || (layer == 1.0 / 0.75)).all());
  }
}

TEST(Network, FiniteParamsGiveFiniteOutputs) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    auto [spec, p] = testing::random_network({2, 12, 12, 5}, rng, 50.0);
    EXPECT_TRUE(forward(spec, p, PointSet::Random(2, 10) * 100.0).allFinite());
  }
}

TEST(Network, DimensionMismatch) {
  NetworkSpec spec({2, 4, 1});
  EXPECT_THROW(forward(spec, init_params(spec, 0), PointSet::Zero(1, 3)), Error);
}

TEST(Network, NormalizationFit) {
  PointSet x(2, 4);
  x << 0, 2, 4, 6, 1, 1, 3, 3;
  const InputNormalization n = InputNormalization::fit(x);
  EXPECT_DOUBLE_EQ(n.shift[0], 3.0);
  EXPECT_DOUBLE_EQ(n.shift[1], 2.0);
  EXPECT_DOUBLE_EQ(n.scale[0], std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(n.scale[1], 1.0);
}

TEST(Network, ParamFileRoundTrip) {
  std::mt19937_64 rng(12);
  auto [spec, p] = testing::random_network({2, 7, 3}, rng);
  spec.dropout_rate = 0.125;
  p[0] = 1.0 / 3.0;
  p[1] = -1e-300;
  const auto path = std::filesystem::temp_directory_path() / "pinnuq_param_roundtrip.csv";
  save_params(path, spec, p);
  const auto [spec2, p2] = load_params(path);
  EXPECT_EQ(p2, p);
  EXPECT_EQ(spec2.layer_widths, spec.layer_widths);
  EXPECT_EQ(spec2.dropout_rate, spec.dropout_rate);
  EXPECT_EQ(spec2.normalization.shift, spec.normalization.shift);
  EXPECT_EQ(spec2.normalization.scale, spec.normalization.scale);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pinnuq
