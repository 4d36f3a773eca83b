#include "pinnuq/autodiff.hpp"

#include <cmath>
#include <string>

#include "pinnuq/error.hpp"

namespace pinnuq {

namespace {

using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

void check_inputs(const NetworkSpec& spec, ParamView params, const PointSet& x,
                  const DerivativeRequest& request, const DropoutMasks* masks) {
  if (static_cast<std::size_t>(params.size()) != spec.param_count()) {
    throw dimension_error("parameter vector has length " + std::to_string(params.size()) +
                          ", network expects " + std::to_string(spec.param_count()));
  }
  if (static_cast<std::size_t>(x.rows()) != spec.input_dim()) {
    throw dimension_error("points have dimension " + std::to_string(x.rows()) + ", network input is " +
                          std::to_string(spec.input_dim()));
  }
  if (spec.normalization.shift.size() != spec.input_dim() || spec.normalization.scale.size() != spec.input_dim()) {
    throw dimension_error("input normalization does not match network input dimension");
  }
  if (!request.second.empty() && !request.first) {
    throw invalid_argument("second derivatives require first derivatives");
  }
  for (const auto& [i, j] : request.second) {
    if (i > j || j >= spec.input_dim()) throw invalid_argument("invalid second-derivative pair");
  }
  if (masks != nullptr) {
    if (masks->layers.size() != spec.hidden_layer_count()) throw dimension_error("dropout mask layer count");
    for (std::size_t l = 0; l < masks->layers.size(); ++l) {
      if (masks->layers[l].rows() != idx(spec.layer_widths[l + 1]) || masks->layers[l].cols() != x.cols()) {
        throw dimension_error("dropout mask shape in layer " + std::to_string(l));
      }
    }
  }
}

/// Seeds the input channels: value is the normalized input; the first-order
/// tangent along input i is e_i / scale_i, which applies the normalization's
/// chain-rule factor once for all later derivatives.
Eigen::MatrixXd seed_inputs(const NetworkSpec& spec, const PointSet& x, const DerivativeRequest& request) {
  const std::size_t d = spec.input_dim();
  const std::size_t n = static_cast<std::size_t>(x.cols());
  const std::size_t channels = request.channel_count(d);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(idx(d), idx(channels * n));
  for (std::size_t i = 0; i < d; ++i) {
    const double shift = spec.normalization.shift[i];
    const double inv_scale = 1.0 / spec.normalization.scale[i];
    a.row(idx(i)).head(idx(n)) = (x.row(idx(i)).array() - shift) * inv_scale;
    if (request.first) a.block(idx(i), idx((1 + i) * n), 1, idx(n)).setConstant(inv_scale);
  }
  return a;
}

/// Runs the forward-mode program.  When `record` is non-null every layer's
/// intermediates are kept for the reverse sweep.
Eigen::MatrixXd run_forward(const NetworkSpec& spec, ParamView params, const PointSet& x,
                            const DerivativeRequest& request, const DropoutMasks* masks,
                            std::vector<NetworkPass::Layer>* record) {
  check_inputs(spec, params, x, request, masks);
  const std::size_t n = static_cast<std::size_t>(x.cols());
  const std::size_t d = spec.input_dim();
  const Index np = idx(n);

  Eigen::MatrixXd a = seed_inputs(spec, x, request);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const Index fan_in = idx(spec.layer_widths[l]);
    const Index fan_out = idx(spec.layer_widths[l + 1]);
    const std::size_t off = spec.weight_offset(l);
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + off, fan_out, fan_in);
    Eigen::Map<const Eigen::VectorXd> b(params.data() + off + static_cast<std::size_t>(fan_out * fan_in), fan_out);

    Eigen::MatrixXd z = w * a;
    z.leftCols(np).colwise() += b;

    const bool hidden = l + 1 < spec.layer_count();
    if (!hidden) {
      if (!z.allFinite()) throw non_finite_at_layer(l);
      if (record) record->push_back({std::move(a), z, {}, {}});
      return z;
    }

    Eigen::MatrixXd h(z.rows(), z.cols());
    Eigen::ArrayXXd t = z.leftCols(np).array().tanh();
    const Eigen::ArrayXXd s = 1.0 - t.square();
    h.leftCols(np) = t.matrix();
    if (request.first) {
      for (std::size_t i = 0; i < d; ++i) {
        h.middleCols(idx((1 + i) * n), np) = (s * z.middleCols(idx((1 + i) * n), np).array()).matrix();
      }
      const Eigen::ArrayXXd two_ts = 2.0 * t * s;
      for (std::size_t p = 0; p < request.second.size(); ++p) {
        const auto [i, j] = request.second[p];
        const Index c = idx((1 + d + p) * n);
        h.middleCols(c, np) =
            (s * z.middleCols(c, np).array() - two_ts * z.middleCols(idx((1 + i) * n), np).array() *
                                                   z.middleCols(idx((1 + j) * n), np).array())
                .matrix();
      }
    }
    Eigen::ArrayXXd mask;
    if (masks != nullptr) {
      mask = masks->layers[l];
      const std::size_t channels = request.channel_count(d);
      for (std::size_t c = 0; c < channels; ++c) h.middleCols(idx(c * n), np).array() *= mask;
    }
    if (!h.leftCols(np).allFinite()) throw non_finite_at_layer(l);
    if (record) record->push_back({std::move(a), std::move(z), std::move(t), std::move(mask)});
    a = std::move(h);
  }
  return a;  // unreachable: every spec has an output layer
}

}  // namespace

DerivativeRequest DerivativeRequest::diagonal_second(std::size_t input_dim) {
  DerivativeRequest r{true, {}};
  for (std::size_t i = 0; i < input_dim; ++i) r.second.emplace_back(i, i);
  return r;
}

std::size_t DerivativeRequest::channel_count(std::size_t input_dim) const {
  return 1 + (first ? input_dim : 0) + second.size();
}

DualTrace::DualTrace(std::size_t rows, std::size_t points, std::size_t input_dim, DerivativeRequest request)
    : rows_(rows), points_(points), input_dim_(input_dim), request_(std::move(request)) {
  data_ = Eigen::MatrixXd::Zero(idx(rows), idx(request_.channel_count(input_dim) * points));
}

std::size_t DualTrace::second_channel(std::size_t i, std::size_t j) const {
  if (i > j) std::swap(i, j);
  for (std::size_t p = 0; p < request_.second.size(); ++p) {
    if (request_.second[p] == std::pair{i, j}) return 1 + input_dim_ + p;
  }
  throw invalid_argument("second derivative (" + std::to_string(i) + "," + std::to_string(j) + ") was not requested");
}

DualTrace evaluate_with_input_derivatives(const NetworkSpec& spec, ParamView params, const PointSet& x,
                                          const DerivativeRequest& request, const DropoutMasks* masks) {
  DualTrace out(spec.output_dim(), static_cast<std::size_t>(x.cols()), spec.input_dim(), request);
  out.stacked() = run_forward(spec, params, x, request, masks, nullptr);
  return out;
}

GradientTape::GradientTape(std::size_t n_params) : adjoints_(Eigen::VectorXd::Zero(idx(n_params))) {}

NetworkPass& GradientTape::record(const NetworkSpec& spec, ParamView params, const PointSet& x,
                                  const DerivativeRequest& request, const DropoutMasks* masks,
                                  std::size_t param_offset) {
  if (param_offset + spec.param_count() > param_count()) {
    throw dimension_error("network parameters do not fit in the tape");
  }
  NetworkPass& pass = passes_.emplace_back();
  pass.spec = &spec;
  pass.param_offset = param_offset;
  pass.params = params;
  const std::size_t n = static_cast<std::size_t>(x.cols());
  pass.out = DualTrace(spec.output_dim(), n, spec.input_dim(), request);
  pass.out.stacked() = run_forward(spec, params, x, request, masks, &pass.layers);
  pass.adjoint = DualTrace(spec.output_dim(), n, spec.input_dim(), request);
  return pass;
}

void GradientTape::add_param_adjoint(const Eigen::Ref<const Eigen::VectorXd>& g, double scale, std::size_t offset) {
  if (offset + static_cast<std::size_t>(g.size()) > param_count()) throw dimension_error("adjoint block out of range");
  adjoints_.segment(idx(offset), g.size()) += scale * g;
}

const Eigen::VectorXd& GradientTape::backward() {
  if (replayed_) return adjoints_;
  replayed_ = true;
  for (auto it = passes_.rbegin(); it != passes_.rend(); ++it) {
    NetworkPass& pass = *it;
    const NetworkSpec& spec = *pass.spec;
    const DerivativeRequest& request = pass.out.request();
    const std::size_t d = pass.out.input_dim();
    const std::size_t n = pass.out.points();
    const Index np = idx(n);
    Eigen::MatrixXd grad_out = pass.adjoint.stacked();

    for (std::size_t l = spec.layer_count(); l-- > 0;) {
      NetworkPass::Layer& layer = pass.layers[l];
      const Index fan_in = idx(spec.layer_widths[l]);
      const Index fan_out = idx(spec.layer_widths[l + 1]);
      const std::size_t off = pass.param_offset + spec.weight_offset(l);
      const bool hidden = l + 1 < spec.layer_count();

      Eigen::MatrixXd grad_pre;
      if (!hidden) {
        grad_pre = std::move(grad_out);
      } else {
        const std::size_t channels = request.channel_count(d);
        if (layer.mask.size() > 0) {
          for (std::size_t c = 0; c < channels; ++c) grad_out.middleCols(idx(c * n), np).array() *= layer.mask;
        }
        const Eigen::ArrayXXd& t = layer.tanh_value;
        const Eigen::ArrayXXd s = 1.0 - t.square();
        const Eigen::ArrayXXd two_ts = 2.0 * t * s;
        const auto z_ch = [&](std::size_t c) { return layer.pre.middleCols(idx(c * n), np).array(); };
        const auto g_ch = [&](std::size_t c) { return grad_out.middleCols(idx(c * n), np).array(); };

        grad_pre.resize(grad_out.rows(), grad_out.cols());
        auto gp = [&](std::size_t c) { return grad_pre.middleCols(idx(c * n), np).array(); };
        gp(0) = s * g_ch(0);
        if (request.first) {
          for (std::size_t i = 0; i < d; ++i) {
            gp(1 + i) = s * g_ch(1 + i);
            gp(0) -= two_ts * z_ch(1 + i) * g_ch(1 + i);
          }
          for (std::size_t p = 0; p < request.second.size(); ++p) {
            const auto [i, j] = request.second[p];
            const std::size_t c = 1 + d + p;
            const auto gij = g_ch(c);
            gp(c) = s * gij;
            gp(0) -= (two_ts * z_ch(c) + 2.0 * s * (s - 2.0 * t.square()) * z_ch(1 + i) * z_ch(1 + j)) * gij;
            gp(1 + i) -= two_ts * z_ch(1 + j) * gij;
            gp(1 + j) -= two_ts * z_ch(1 + i) * gij;
          }
        }
      }

      Eigen::Map<Eigen::MatrixXd> w_adj(adjoints_.data() + off, fan_out, fan_in);
      w_adj.noalias() += grad_pre * layer.input.transpose();
      adjoints_.segment(idx(off + static_cast<std::size_t>(fan_out * fan_in)), fan_out) +=
          grad_pre.leftCols(np).rowwise().sum();

      if (l > 0) {
        Eigen::Map<const Eigen::MatrixXd> w(pass.params.data() + spec.weight_offset(l), fan_out, fan_in);
        grad_out.noalias() = w.transpose() * grad_pre;
      }
      layer = NetworkPass::Layer{};
    }
  }
  passes_.clear();
  return adjoints_;
}

LossAndGradient loss_gradient(const TapedLoss& loss, ParamView params) {
  GradientTape tape(static_cast<std::size_t>(params.size()));
  LossAndGradient result;
  result.value = loss(params, tape);
  if (!std::isfinite(result.value)) throw Error(ErrorKind::kNonFinite, "loss is not finite");
  result.gradient = tape.backward();
  for (Index k = 0; k < result.gradient.size(); ++k) {
    if (!std::isfinite(result.gradient[k])) {
      Error e(ErrorKind::kNonFinite, "gradient entry " + std::to_string(k) + " is not finite");
      e.point = static_cast<std::size_t>(k);
      throw e;
    }
  }
  return result;
}

}  // namespace pinnuq
