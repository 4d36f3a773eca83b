#pragma once

#include <array>
#include <cstddef>
#include <variant>

#include <Eigen/Core>

#include "pinnuq/autodiff.hpp"
#include "pinnuq/network.hpp"

namespace pinnuq {

/// Van der Pol oscillator u'' - eps*omega0*(1-u^2)*u' + omega0^2*u = 0.
struct VdpParams {
  double epsilon = 1.0;
  double omega0 = 15.0;
};

/// Output layout of RANS networks.
namespace rans {
inline constexpr std::size_t kU = 0;
inline constexpr std::size_t kV = 1;
inline constexpr std::size_t kP = 2;
inline constexpr std::size_t kFx = 3;
inline constexpr std::size_t kFy = 4;
inline constexpr std::size_t kOutputs = 5;
}  // namespace rans

struct RansFieldsAtPoint {
  double U = 0, V = 0, P = 0, fx = 0, fy = 0;
  double U_x = 0, U_y = 0, V_x = 0, V_y = 0, P_x = 0, P_y = 0;
  double U_xx = 0, U_yy = 0, V_xx = 0, V_yy = 0;
  double Re = 1.0;
};

double vdp_residual(double u, double u_dot, double u_ddot, const VdpParams& p);

/// (x-momentum, y-momentum, continuity) residuals of steady 2-D RANS with the
/// Reynolds-force closure entering with a plus sign.
std::array<double, 3> rans_residuals(const RansFieldsAtPoint& f);

struct VdpProblem {
  VdpParams params;
  /// Multiplies every residual (e.g. 1e-4); keeps the physics term's scale
  /// configurable.
  double residual_scale = 1.0;
};

struct RansProblem {
  double reynolds = 3900.0;
};

using Problem = std::variant<VdpProblem, RansProblem>;

/// Residual components per point: 1 for Van der Pol, 3 for RANS.
std::size_t residual_count(const Problem& problem);
/// Input derivatives the residual operator consumes.
DerivativeRequest residual_request(const Problem& problem);

/// Residuals from an evaluated trace, shape (residual_count x points).
Eigen::MatrixXd residuals_from_trace(const DualTrace& trace, const Problem& problem);

/// residual_batch: network + derivatives + residual operator, output columns
/// in input order.
Eigen::MatrixXd residual_batch(const NetworkSpec& spec, ParamView params, const PointSet& points,
                               const Problem& problem);

/// Given d(loss)/d(residual) (same shape as the residuals), writes the
/// corresponding output adjoints into `adjoint` (accumulating).
void seed_residual_adjoint(const DualTrace& trace, const Problem& problem, const Eigen::MatrixXd& residual_adjoint,
                           DualTrace& adjoint);

}  // namespace pinnuq
