#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pinnuq/error.hpp"
#include "pinnuq/physics.hpp"
#include "support/oracles.hpp"

namespace pinnuq {
namespace {

TEST(VdpResidual, Examples) {
  const VdpParams p{1.0, 15.0};
  EXPECT_EQ(vdp_residual(0, 0, 0, p), 0.0);
  EXPECT_DOUBLE_EQ(vdp_residual(1.0, 7.3, -2.0, p), -2.0 + 225.0);
  // cos(wt) at t = 0 with eps = 0: u = 1, u' = 0, u'' = -w^2.
  EXPECT_EQ(vdp_residual(1.0, 0.0, -225.0, VdpParams{0.0, 15.0}), 0.0);
}

TEST(RansResiduals, UniformFlow) {
  RansFieldsAtPoint f;
  f.U = 1.0;
  f.P = 3.0;
  f.Re = 3900.0;
  const auto r = rans_residuals(f);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 0.0);
}

TEST(RansResiduals, StagnationFlow) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 50; ++t) {
    const double x = u(rng), y = u(rng);
    RansFieldsAtPoint f;
    f.U = x;
    f.V = -y;
    f.P = -(x * x + y * y) / 2;
    f.U_x = 1.0;
    f.V_y = -1.0;
    f.P_x = -x;
    f.P_y = -y;
    f.Re = 100.0;
    const auto r = rans_residuals(f);
    EXPECT_EQ(r[2], 0.0);
    EXPECT_NEAR(r[0], 0.0, 1e-15);
    EXPECT_NEAR(r[1], 0.0, 1e-15);
  }
}

TEST(RansResiduals, LinearInClosure) {
  RansFieldsAtPoint f;
  f.U = 0.3; f.V = -0.2; f.U_x = 0.1; f.U_y = 0.4; f.V_x = -0.5; f.V_y = 0.7;
  f.P_x = 0.2; f.P_y = -0.1; f.U_xx = 1.0; f.U_yy = 2.0; f.V_xx = -1.0; f.V_yy = 0.5; f.Re = 10.0;
  const auto r0 = rans_residuals(f);
  f.fx = 0.25;
  f.fy = -1.5;
  const auto r1 = rans_residuals(f);
  EXPECT_DOUBLE_EQ(r1[0] - r0[0], 0.25);
  EXPECT_DOUBLE_EQ(r1[1] - r0[1], -1.5);
  EXPECT_EQ(r1[2], r0[2]);
}

TEST(ResidualBatch, ZeroAndConstantNetworks) {
  NetworkSpec spec({2, 8, 5});
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  PointSet x = PointSet::Random(2, 12);
  const Problem rans = RansProblem{3900.0};
  EXPECT_EQ(residual_batch(spec, p, x, rans).cwiseAbs().maxCoeff(), 0.0);
  p.tail(5) << 0.4, -0.3, 2.0, 0.75, -1.25;
  const Eigen::MatrixXd r = residual_batch(spec, p, x, rans);
  ASSERT_EQ(r.rows(), 3);
  ASSERT_EQ(r.cols(), 12);
  EXPECT_TRUE((r.row(0).array() == 0.75).all());
  EXPECT_TRUE((r.row(1).array() == -1.25).all());
  EXPECT_TRUE((r.row(2).array() == 0.0).all());
}

TEST(ResidualBatch, VdpMatchesFiniteDifferenceDerivatives) {
  std::mt19937_64 rng(5);
  const VdpParams vp{1.0, 15.0};
  const Problem problem = VdpProblem{vp, 1.0};
  for (int t = 0; t < 10; ++t) {
    auto [spec, p] = testing::random_network({1, 10, 10, 1}, rng);
    PointSet x = PointSet::Random(1, 6);
    const Eigen::MatrixXd r = residual_batch(spec, p, x, problem);
    auto f = [&](const std::vector<double>& v) { return testing::naive_forward(spec, p, v); };
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const std::vector<double> v{x(0, j)};
      const double u = f(v)[0];
      const double ut = testing::fd_first(f, v, 0, 1e-4)[0];
      const double utt = testing::fd_second(f, v, 0, 0, 1e-3)[0];
      const double ref = vdp_residual(u, ut, utt, vp);
      EXPECT_LT(std::abs(r(0, j) - ref), 1e-5 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(ResidualBatch, ResidualScaleMultiplies) {
  NetworkSpec spec({1, 6, 1});
  const ParamVector p = init_params(spec, 4);
  PointSet x = PointSet::Random(1, 5);
  const Eigen::MatrixXd a = residual_batch(spec, p, x, VdpProblem{{}, 1.0});
  const Eigen::MatrixXd b = residual_batch(spec, p, x, VdpProblem{{}, 1e-4});
  EXPECT_LT((b - 1e-4 * a).cwiseAbs().maxCoeff(), 1e-15 * a.cwiseAbs().maxCoeff());
}

TEST(ResidualBatch, StreamFunctionVelocityIsDivergenceFree) {
  std::mt19937_64 rng(6);
  auto [spec, p] = testing::random_network({2, 12, 12, 1}, rng);
  PointSet x = PointSet::Random(2, 100) * 2.0;
  // U = psi_y, V = -psi_x, so U_x = psi_xy and V_y = -psi_xy.
  const DualTrace t = evaluate_with_input_derivatives(spec, p, x, DerivativeRequest{true, {{0, 1}}});
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    RansFieldsAtPoint f;
    f.U = t.d(1)(0, j);
    f.V = -t.d(0)(0, j);
    f.U_x = t.d2(0, 1)(0, j);
    f.V_y = -t.d2(0, 1)(0, j);
    f.Re = 3900.0;
    EXPECT_LT(std::abs(rans_residuals(f)[2]), 1e-10);
  }
}

TEST(ResidualBatch, RansBatchMatchesPointwiseOperator) {
  std::mt19937_64 rng(7);
  auto [spec, p] = testing::random_network({2, 8, 8, 5}, rng);
  PointSet x = PointSet::Random(2, 9);
  const Problem problem = RansProblem{200.0};
  const Eigen::MatrixXd r = residual_batch(spec, p, x, problem);
  const DualTrace t = evaluate_with_input_derivatives(spec, p, x, DerivativeRequest::diagonal_second(2));
  using namespace rans;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    RansFieldsAtPoint f;
    f.U = t.value()(kU, j); f.V = t.value()(kV, j); f.P = t.value()(kP, j);
    f.fx = t.value()(kFx, j); f.fy = t.value()(kFy, j);
    f.U_x = t.d(0)(kU, j); f.U_y = t.d(1)(kU, j); f.V_x = t.d(0)(kV, j); f.V_y = t.d(1)(kV, j);
    f.P_x = t.d(0)(kP, j); f.P_y = t.d(1)(kP, j);
    f.U_xx = t.d2(0, 0)(kU, j); f.U_yy = t.d2(1, 1)(kU, j);
    f.V_xx = t.d2(0, 0)(kV, j); f.V_yy = t.d2(1, 1)(kV, j);
    f.Re = 200.0;
    const auto ref = rans_residuals(f);
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(r(c, j), ref[static_cast<std::size_t>(c)], 1e-13);
  }
}

TEST(ResidualBatch, WrongNetworkShapeIsRejected) {
  NetworkSpec spec({2, 4, 3});
  EXPECT_THROW(residual_batch(spec, init_params(spec, 0), PointSet::Zero(2, 2), RansProblem{}), Error);
}

}  // namespace
}  // namespace pinnuq
