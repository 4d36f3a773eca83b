#include "pinnuq/physics.hpp"

#include <type_traits>

#include "pinnuq/error.hpp"

namespace pinnuq {

double vdp_residual(double u, double u_dot, double u_ddot, const VdpParams& p) {
  return u_ddot - p.epsilon * p.omega0 * (1.0 - u * u) * u_dot + p.omega0 * p.omega0 * u;
}

std::array<double, 3> rans_residuals(const RansFieldsAtPoint& f) {
  const double nu = 1.0 / f.Re;
  return {
      f.U * f.U_x + f.V * f.U_y + f.P_x - nu * (f.U_xx + f.U_yy) + f.fx,
      f.U * f.V_x + f.V * f.V_y + f.P_y - nu * (f.V_xx + f.V_yy) + f.fy,
      f.U_x + f.V_y,
  };
}

std::size_t residual_count(const Problem& problem) {
  return std::holds_alternative<VdpProblem>(problem) ? 1 : 3;
}

DerivativeRequest residual_request(const Problem& problem) {
  return std::holds_alternative<VdpProblem>(problem) ? DerivativeRequest::diagonal_second(1)
                                                     : DerivativeRequest::diagonal_second(2);
}

namespace {

void check_trace(const DualTrace& trace, const Problem& problem) {
  if (const auto* vdp = std::get_if<VdpProblem>(&problem)) {
    (void)vdp;
    if (trace.input_dim() != 1 || trace.rows() < 1) throw dimension_error("Van der Pol residual needs a 1-D input network");
  } else {
    if (trace.input_dim() != 2 || trace.rows() != rans::kOutputs) {
      throw dimension_error("RANS residual needs a network R^2 -> R^5 (U, V, P, fx, fy)");
    }
    if (!(std::get<RansProblem>(problem).reynolds > 0.0)) throw invalid_argument("Reynolds number must be positive");
  }
}

}  // namespace

Eigen::MatrixXd residuals_from_trace(const DualTrace& trace, const Problem& problem) {
  check_trace(trace, problem);
  const Eigen::Index n = static_cast<Eigen::Index>(trace.points());
  if (const auto* vdp = std::get_if<VdpProblem>(&problem)) {
    const VdpParams& p = vdp->params;
    const auto u = trace.value().row(0).array();
    const auto ut = trace.d(0).row(0).array();
    const auto utt = trace.d2(0, 0).row(0).array();
    Eigen::MatrixXd r(1, n);
    r.row(0) = (vdp->residual_scale *
                (utt - p.epsilon * p.omega0 * (1.0 - u.square()) * ut + p.omega0 * p.omega0 * u))
                   .matrix();
    return r;
  }
  const double nu = 1.0 / std::get<RansProblem>(problem).reynolds;
  const auto val = trace.value();
  const auto dx = trace.d(0);
  const auto dy = trace.d(1);
  const auto dxx = trace.d2(0, 0);
  const auto dyy = trace.d2(1, 1);
  using namespace rans;
  Eigen::MatrixXd r(3, n);
  const auto U = val.row(kU).array();
  const auto V = val.row(kV).array();
  r.row(0) = (U * dx.row(kU).array() + V * dy.row(kU).array() + dx.row(kP).array() -
              nu * (dxx.row(kU).array() + dyy.row(kU).array()) + val.row(kFx).array())
                 .matrix();
  r.row(1) = (U * dx.row(kV).array() + V * dy.row(kV).array() + dy.row(kP).array() -
              nu * (dxx.row(kV).array() + dyy.row(kV).array()) + val.row(kFy).array())
                 .matrix();
  r.row(2) = dx.row(kU) + dy.row(kV);
  return r;
}

Eigen::MatrixXd residual_batch(const NetworkSpec& spec, ParamView params, const PointSet& points,
                               const Problem& problem) {
  const DualTrace trace = evaluate_with_input_derivatives(spec, params, points, residual_request(problem));
  return residuals_from_trace(trace, problem);
}

void seed_residual_adjoint(const DualTrace& trace, const Problem& problem, const Eigen::MatrixXd& g,
                           DualTrace& adjoint) {
  check_trace(trace, problem);
  if (const auto* vdp = std::get_if<VdpProblem>(&problem)) {
    const VdpParams& p = vdp->params;
    const double s = vdp->residual_scale;
    const auto u = trace.value().row(0).array();
    const auto ut = trace.d(0).row(0).array();
    const auto gr = g.row(0).array();
    adjoint.value().row(0).array() += s * gr * (2.0 * p.epsilon * p.omega0 * u * ut + p.omega0 * p.omega0);
    adjoint.d(0).row(0).array() += -s * p.epsilon * p.omega0 * gr * (1.0 - u.square());
    adjoint.d2(0, 0).row(0).array() += s * gr;
    return;
  }
  using namespace rans;
  const double nu = 1.0 / std::get<RansProblem>(problem).reynolds;
  const auto val = trace.value();
  const auto dx = trace.d(0);
  const auto dy = trace.d(1);
  const auto g1 = g.row(0).array();
  const auto g2 = g.row(1).array();
  const auto g3 = g.row(2).array();

  // r1 = U U_x + V U_y + P_x - nu (U_xx + U_yy) + fx
  // r2 = U V_x + V V_y + P_y - nu (V_xx + V_yy) + fy
  // r3 = U_x + V_y
  adjoint.value().row(kU).array() += g1 * dx.row(kU).array() + g2 * dx.row(kV).array();
  adjoint.value().row(kV).array() += g1 * dy.row(kU).array() + g2 * dy.row(kV).array();
  adjoint.value().row(kFx).array() += g1;
  adjoint.value().row(kFy).array() += g2;
  adjoint.d(0).row(kU).array() += g1 * val.row(kU).array() + g3;
  adjoint.d(1).row(kU).array() += g1 * val.row(kV).array();
  adjoint.d(0).row(kV).array() += g2 * val.row(kU).array();
  adjoint.d(1).row(kV).array() += g2 * val.row(kV).array() + g3;
  adjoint.d(0).row(kP).array() += g1;
  adjoint.d(1).row(kP).array() += g2;
  adjoint.d2(0, 0).row(kU).array() -= nu * g1;
  adjoint.d2(1, 1).row(kU).array() -= nu * g1;
  adjoint.d2(0, 0).row(kV).array() -= nu * g2;
  adjoint.d2(1, 1).row(kV).array() -= nu * g2;
}

}  // namespace pinnuq
