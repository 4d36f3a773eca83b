#include "pinnuq/posterior.hpp"

#include <algorithm>
#include <cmath>

#include "pinnuq/error.hpp"

namespace pinnuq {

namespace {

bool in_group(std::size_t output, DataGroup group) {
  if (group == DataGroup::kVelocity) return output == rans::kU || output == rans::kV;
  return output == rans::kFx || output == rans::kFy;
}

void require_nonempty(const ObservationSet& obs) {
  if (obs.size() == 0) throw invalid_argument("observation set is empty");
}

void check_obs_against_net(const NetworkSpec& net, const ObservationSet& obs) {
  for (const auto& c : obs.components) {
    if (c.output >= net.output_dim()) throw dimension_error("observed component '" + c.name + "' is not a network output");
    if (static_cast<std::size_t>(c.values.size()) != obs.size()) {
      throw dimension_error("component '" + c.name + "' length does not match the observation points");
    }
  }
}

/// -1/2 * sum over points and the listed components of ((f - y) / sigma)^2.
double group_log_lik(const Eigen::MatrixXd& out, const ObservationSet& obs, DataGroup group,
                     const TemperedPosteriorSpec& spec) {
  double acc = 0.0;
  for (const auto& c : obs.components) {
    if (!in_group(c.output, group)) continue;
    const double sigma = spec.sigma_for_output(c.output);
    acc += ((out.row(static_cast<Eigen::Index>(c.output)).transpose() - c.values) / sigma).squaredNorm();
  }
  return -0.5 * acc;
}

bool group_observed(const ObservationSet& obs, DataGroup group) {
  return std::any_of(obs.components.begin(), obs.components.end(),
                     [&](const ObservedComponent& c) { return in_group(c.output, group); });
}

void check_residuals_finite(const Eigen::MatrixXd& r, Eigen::Index first = 0) {
  for (Eigen::Index j = 0; j < r.cols(); ++j) {
    if (!r.col(j).allFinite()) {
      throw non_finite_at_point("non-finite PDE residual", static_cast<std::size_t>(first + j));
    }
  }
}

/// Points per taped residual pass.
constexpr Eigen::Index kResidualChunk = 512;

double tempered_weight(std::size_t n_total, double beta, std::size_t n_here) {
  return std::pow(static_cast<double>(n_total), beta) / static_cast<double>(n_here);
}

void require_members(std::size_t m) {
  if (m < 2) throw invalid_argument("repulsion needs at least two ensemble members");
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw invalid_argument("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

const ObservedComponent* ObservationSet::find(std::size_t output) const {
  for (const auto& c : components) {
    if (c.output == output) return &c;
  }
  return nullptr;
}

void ObservationSet::validate(const Problem& problem) const {
  for (const auto& c : components) {
    if (static_cast<std::size_t>(c.values.size()) != size()) {
      throw dimension_error("component '" + c.name + "' has " + std::to_string(c.values.size()) + " values for " +
                            std::to_string(size()) + " points");
    }
    if (std::holds_alternative<RansProblem>(problem) && c.output == rans::kP) {
      throw invalid_argument("pressure must not be observed");
    }
    if (!c.values.allFinite()) throw invalid_argument("component '" + c.name + "' has non-finite values");
  }
}

TemperedPosteriorSpec TemperedPosteriorSpec::untempered(double sigma_prior, double sigma_data, double sigma_pde) {
  TemperedPosteriorSpec s;
  s.sigma_prior = sigma_prior;
  s.sigma_u = s.sigma_v = s.sigma_fx = s.sigma_fy = sigma_data;
  s.sigma_pde = sigma_pde;
  s.beta_d = s.beta_f = s.beta_r = 1.0;
  return s;
}

double TemperedPosteriorSpec::sigma_for_output(std::size_t output) const {
  switch (output) {
    case rans::kU: return sigma_u;
    case rans::kV: return sigma_v;
    case rans::kFx: return sigma_fx;
    case rans::kFy: return sigma_fy;
    default: throw invalid_argument("output " + std::to_string(output) + " has no observation noise scale");
  }
}

void TemperedPosteriorSpec::validate() const {
  for (double s : {sigma_prior, sigma_u, sigma_v, sigma_fx, sigma_fy, sigma_pde}) {
    if (!(s > 0.0)) throw invalid_argument("all standard deviations must be positive");
  }
  for (double b : {beta_d, beta_f, beta_r}) {
    if (!(b >= 0.0 && b <= 1.0)) throw invalid_argument("tempering exponents must lie in [0, 1]");
  }
}

double log_prior(ParamView params, double sigma_prior) {
  if (!(sigma_prior > 0.0)) throw invalid_argument("prior scale must be positive");
  return -0.5 * params.squaredNorm() / (sigma_prior * sigma_prior);
}

double log_lik_velocity(const NetworkSpec& net, ParamView params, const ObservationSet& obs, double sigma_u,
                        double sigma_v) {
  require_nonempty(obs);
  check_obs_against_net(net, obs);
  TemperedPosteriorSpec spec;
  spec.sigma_u = sigma_u;
  spec.sigma_v = sigma_v;
  return group_log_lik(forward(net, params, obs.points), obs, DataGroup::kVelocity, spec);
}

double log_lik_reynolds(const NetworkSpec& net, ParamView params, const ObservationSet& obs, double sigma_fx,
                        double sigma_fy) {
  require_nonempty(obs);
  check_obs_against_net(net, obs);
  TemperedPosteriorSpec spec;
  spec.sigma_fx = sigma_fx;
  spec.sigma_fy = sigma_fy;
  return group_log_lik(forward(net, params, obs.points), obs, DataGroup::kReynolds, spec);
}

double log_lik_pde(const NetworkSpec& net, ParamView params, const PointSet& collocation, double sigma_pde,
                   const Problem& problem) {
  if (collocation.cols() == 0) throw invalid_argument("collocation set is empty");
  if (!(sigma_pde > 0.0)) throw invalid_argument("sigma_pde must be positive");
  const Eigen::MatrixXd r = residual_batch(net, params, collocation, problem);
  check_residuals_finite(r);
  return -0.5 * r.squaredNorm() / (sigma_pde * sigma_pde);
}

double tempered_log_posterior(const TemperedPosteriorSpec& spec, const NetworkSpec& net, ParamView params,
                              const ObservationSet& obs, const PointSet& collocation, const Problem& problem) {
  spec.validate();
  require_nonempty(obs);
  check_obs_against_net(net, obs);
  if (collocation.cols() == 0) throw invalid_argument("collocation set is empty");
  const std::size_t nd = obs.size();
  const std::size_t nc = static_cast<std::size_t>(collocation.cols());
  const Eigen::MatrixXd out = forward(net, params, obs.points);

  double value = log_prior(params, spec.sigma_prior);
  if (group_observed(obs, DataGroup::kVelocity)) {
    value += tempered_weight(nd, spec.beta_d, nd) * group_log_lik(out, obs, DataGroup::kVelocity, spec);
  }
  if (group_observed(obs, DataGroup::kReynolds)) {
    value += tempered_weight(nd, spec.beta_f, nd) * group_log_lik(out, obs, DataGroup::kReynolds, spec);
  }
  value += tempered_weight(nc, spec.beta_r, nc) * log_lik_pde(net, params, collocation, spec.sigma_pde, problem);
  return value;
}

double pinn_loss(const NetworkSpec& net, ParamView params, const ObservationSet& obs, const PointSet& collocation,
                 double lambda_pde, const Problem& problem) {
  require_nonempty(obs);
  check_obs_against_net(net, obs);
  if (collocation.cols() == 0) throw invalid_argument("collocation set is empty");
  const Eigen::MatrixXd out = forward(net, params, obs.points);
  double data = 0.0;
  for (const auto& c : obs.components) {
    data += (out.row(static_cast<Eigen::Index>(c.output)).transpose() - c.values).squaredNorm();
  }
  data /= static_cast<double>(obs.size());
  const Eigen::MatrixXd r = residual_batch(net, params, collocation, problem);
  check_residuals_finite(r);
  return data + lambda_pde * r.squaredNorm() / static_cast<double>(collocation.cols());
}

double repulsion_parameter_space(const std::vector<ParamVector>& members, double sigma_theta) {
  require_members(members.size());
  if (!(sigma_theta > 0.0)) throw invalid_argument("repulsion bandwidth must be positive");
  const double inv = 1.0 / (sigma_theta * sigma_theta);
  double acc = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j = i + 1; j < members.size(); ++j) acc += std::exp(-(members[i] - members[j]).squaredNorm() * inv);
  }
  return acc;
}

double repulsion_function_space(const std::vector<Eigen::MatrixXd>& outputs, double sigma_f) {
  require_members(outputs.size());
  if (!(sigma_f > 0.0)) throw invalid_argument("repulsion bandwidth must be positive");
  const Eigen::Index n = outputs.front().cols();
  if (n == 0) throw invalid_argument("repulsion needs at least one evaluation point");
  const double inv = 1.0 / (sigma_f * sigma_f);
  double acc = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (std::size_t j = i + 1; j < outputs.size(); ++j) {
      acc += (-(outputs[i] - outputs[j]).colwise().squaredNorm().array() * inv).exp().sum();
    }
  }
  return acc / static_cast<double>(n);
}

double repulsion_function_space(const NetworkSpec& net, const std::vector<ParamVector>& members,
                                const PointSet& points, double sigma_f) {
  require_members(members.size());
  std::vector<Eigen::MatrixXd> outputs;
  outputs.reserve(members.size());
  for (const auto& m : members) outputs.push_back(forward(net, m, points));
  return repulsion_function_space(outputs, sigma_f);
}

double median_sq_distance(const std::vector<ParamVector>& members) {
  require_members(members.size());
  std::vector<double> d;
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j = i + 1; j < members.size(); ++j) d.push_back((members[i] - members[j]).squaredNorm());
  }
  return median_of(std::move(d));
}

double median_sq_distance(const std::vector<Eigen::MatrixXd>& outputs) {
  require_members(outputs.size());
  std::vector<double> d;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (std::size_t j = i + 1; j < outputs.size(); ++j) {
      const Eigen::VectorXd pair = (outputs[i] - outputs[j]).colwise().squaredNorm().transpose();
      d.insert(d.end(), pair.data(), pair.data() + pair.size());
    }
  }
  return median_of(std::move(d));
}

double ensemble_objective(std::size_t member, const NetworkSpec& net, const std::vector<ParamVector>& members,
                          const ObservationSet& obs, const PointSet& collocation, const RepulsionSpec& rep,
                          double lambda_pde, const Problem& problem) {
  if (member >= members.size()) throw invalid_argument("member index out of range");
  double value = pinn_loss(net, members[member], obs, collocation, lambda_pde, problem);
  if (rep.lambda_rep != 0.0) {
    value += rep.lambda_rep * (rep.variant == RepulsionVariant::kParameterSpace
                                   ? repulsion_parameter_space(members, rep.bandwidth)
                                   : repulsion_function_space(net, members, rep.points, rep.bandwidth));
  }
  return value;
}

// ---------------------------------------------------------------------------

double log_prior_taped(GradientTape& tape, ParamView params, double sigma_prior, double scale,
                       std::size_t param_offset) {
  const double inv_var = 1.0 / (sigma_prior * sigma_prior);
  tape.add_param_adjoint(params, -scale * inv_var, param_offset);
  return -0.5 * params.squaredNorm() * inv_var;
}

double data_log_lik_taped(GradientTape& tape, const NetworkSpec& net, ParamView params, const ObservationSet& obs,
                          DataGroup group, const TemperedPosteriorSpec& spec, double scale) {
  if (!group_observed(obs, group)) return 0.0;
  require_nonempty(obs);
  check_obs_against_net(net, obs);
  const std::size_t nd = obs.size();
  const double beta = group == DataGroup::kVelocity ? spec.beta_d : spec.beta_f;
  const double w = tempered_weight(nd, beta, nd);
  NetworkPass& pass = tape.record(net, params, obs.points, DerivativeRequest::values_only());
  double acc = 0.0;
  for (const auto& c : obs.components) {
    if (!in_group(c.output, group)) continue;
    const double sigma = spec.sigma_for_output(c.output);
    const auto row = static_cast<Eigen::Index>(c.output);
    const Eigen::VectorXd e = (pass.out.value().row(row).transpose() - c.values) / sigma;
    acc += e.squaredNorm();
    pass.adjoint.value().row(row) += (-scale * w / sigma) * e.transpose();
  }
  return -0.5 * w * acc;
}

double physics_log_lik_taped(GradientTape& tape, const NetworkSpec& net, ParamView params, const PointSet& points,
                             std::size_t n_total, const TemperedPosteriorSpec& spec, const Problem& problem,
                             double scale) {
  if (points.cols() == 0) throw invalid_argument("collocation set is empty");
  const double w = tempered_weight(n_total, spec.beta_r, static_cast<std::size_t>(points.cols()));
  const double inv_var = 1.0 / (spec.sigma_pde * spec.sigma_pde);
  const DerivativeRequest request = residual_request(problem);
  double sq = 0.0;
  for (Eigen::Index c0 = 0; c0 < points.cols(); c0 += kResidualChunk) {
    const PointSet block = points.middleCols(c0, std::min(kResidualChunk, points.cols() - c0));
    NetworkPass& pass = tape.record(net, params, block, request);
    const Eigen::MatrixXd r = residuals_from_trace(pass.out, problem);
    check_residuals_finite(r, c0);
    if (scale != 0.0) seed_residual_adjoint(pass.out, problem, (-scale * w * inv_var) * r, pass.adjoint);
    sq += r.squaredNorm();
  }
  return -0.5 * w * inv_var * sq;
}

PinnLossParts pinn_loss_taped(GradientTape& tape, const NetworkSpec& net, ParamView params,
                              const ObservationSet& obs, const PointSet& collocation, double lambda_pde,
                              const Problem& problem, const DropoutMasks* data_masks,
                              const DropoutMasks* pde_masks) {
  check_obs_against_net(net, obs);
  PinnLossParts parts;
  if (obs.size() > 0) {
    const double inv_nd = 1.0 / static_cast<double>(obs.size());
    NetworkPass& data_pass = tape.record(net, params, obs.points, DerivativeRequest::values_only(), data_masks);
    for (const auto& c : obs.components) {
      const auto row = static_cast<Eigen::Index>(c.output);
      const Eigen::VectorXd e = data_pass.out.value().row(row).transpose() - c.values;
      parts.data += e.squaredNorm() * inv_nd;
      data_pass.adjoint.value().row(row) += (2.0 * inv_nd) * e.transpose();
    }
  }
  if (collocation.cols() == 0) {
    if (lambda_pde != 0.0) throw invalid_argument("collocation set is empty");
    return parts;
  }
  if (lambda_pde == 0.0) {
    // Residuals still reported for loss histories.
    parts.pde = residual_batch(net, params, collocation, problem).squaredNorm() / static_cast<double>(collocation.cols());
    return parts;
  }
  const double inv_nc = 1.0 / static_cast<double>(collocation.cols());
  NetworkPass& pde_pass = tape.record(net, params, collocation, residual_request(problem), pde_masks);
  const Eigen::MatrixXd r = residuals_from_trace(pde_pass.out, problem);
  check_residuals_finite(r);
  parts.pde = r.squaredNorm() * inv_nc;
  seed_residual_adjoint(pde_pass.out, problem, (2.0 * lambda_pde * inv_nc) * r, pde_pass.adjoint);
  return parts;
}

Eigen::VectorXd repulsion_parameter_space_gradient(std::size_t member, const std::vector<ParamVector>& members,
                                                   double sigma_theta) {
  require_members(members.size());
  const double inv = 1.0 / (sigma_theta * sigma_theta);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(members[member].size());
  for (std::size_t j = 0; j < members.size(); ++j) {
    if (j == member) continue;
    const Eigen::VectorXd diff = members[member] - members[j];
    g += (-2.0 * inv * std::exp(-diff.squaredNorm() * inv)) * diff;
  }
  return g;
}

double repulsion_function_space_taped(GradientTape& tape, std::size_t member, const NetworkSpec& net,
                                      ParamView params, const std::vector<Eigen::MatrixXd>& snapshot_outputs,
                                      const PointSet& points, double sigma_f, double scale) {
  require_members(snapshot_outputs.size());
  const double inv = 1.0 / (sigma_f * sigma_f);
  const double inv_n = 1.0 / static_cast<double>(points.cols());
  NetworkPass& pass = tape.record(net, params, points, DerivativeRequest::values_only());
  const Eigen::MatrixXd own = pass.out.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < snapshot_outputs.size(); ++i) {
    const Eigen::MatrixXd& fi = i == member ? own : snapshot_outputs[i];
    for (std::size_t j = i + 1; j < snapshot_outputs.size(); ++j) {
      const Eigen::MatrixXd& fj = j == member ? own : snapshot_outputs[j];
      const Eigen::MatrixXd diff = fi - fj;
      const Eigen::RowVectorXd k = (-diff.colwise().squaredNorm().array() * inv).exp().matrix();
      acc += k.sum();
      if (i != member && j != member) continue;
      // d/d f_member of exp(-|f_i - f_j|^2 / s^2); sign flips when member is j.
      const double sign = i == member ? 1.0 : -1.0;
      pass.adjoint.value() += (sign * scale * inv_n * -2.0 * inv) * (diff.array().rowwise() * k.array()).matrix();
    }
  }
  return acc * inv_n;
}

}  // namespace pinnuq
