#pragma once

// Differentiation engine for tanh MLPs.
//
// Input derivatives are propagated in forward mode: every activation carries
// a value channel, one first-order tangent per input and one second-order
// tangent per requested input pair (i, j).  All channels of a layer are stacked
// side by side so each affine layer is a single matrix product.
//
// Parameter gradients come from a reverse sweep over the recorded forward
// program (affine, tanh, dropout-mask multiply).  Because the tangent channels
// are part of that program, losses built from input derivatives (PDE
// residuals) are differentiated exactly.

#include <cstddef>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pinnuq/network.hpp"

namespace pinnuq {

/// Which input derivatives a batched evaluation carries.
struct DerivativeRequest {
  bool first = false;
  /// Second derivative pairs (i, j), i <= j.  Requires `first`.
  std::vector<std::pair<std::size_t, std::size_t>> second;

  static DerivativeRequest values_only() { return {}; }
  static DerivativeRequest first_order() { return {true, {}}; }
  /// First derivatives plus every pure second derivative d2/dx_i^2.
  static DerivativeRequest diagonal_second(std::size_t input_dim);

  std::size_t channel_count(std::size_t input_dim) const;
};

/// Batched dual numbers: channel c is an (outputs x points) matrix.  Channel 0
/// holds values, channels 1..d first derivatives, the rest the requested
/// second derivatives in request order.  Derivatives are with respect to
/// physical (un-normalized) inputs.
class DualTrace {
 public:
  DualTrace() = default;
  DualTrace(std::size_t rows, std::size_t points, std::size_t input_dim, DerivativeRequest request);

  std::size_t rows() const { return rows_; }
  std::size_t points() const { return points_; }
  std::size_t input_dim() const { return input_dim_; }
  const DerivativeRequest& request() const { return request_; }

  /// All channels side by side: (rows x channels*points).
  Eigen::MatrixXd& stacked() { return data_; }
  const Eigen::MatrixXd& stacked() const { return data_; }

  using Channel = Eigen::MatrixXd::ColsBlockXpr;
  using ConstChannel = Eigen::MatrixXd::ConstColsBlockXpr;

  Channel channel(std::size_t c) {
    return data_.middleCols(static_cast<Eigen::Index>(c * points_), static_cast<Eigen::Index>(points_));
  }
  ConstChannel channel(std::size_t c) const {
    return data_.middleCols(static_cast<Eigen::Index>(c * points_), static_cast<Eigen::Index>(points_));
  }
  Channel value() { return channel(0); }
  ConstChannel value() const { return channel(0); }
  Channel d(std::size_t input) { return channel(1 + input); }
  ConstChannel d(std::size_t input) const { return channel(1 + input); }
  Channel d2(std::size_t i, std::size_t j) { return channel(second_channel(i, j)); }
  ConstChannel d2(std::size_t i, std::size_t j) const { return channel(second_channel(i, j)); }

  std::size_t second_channel(std::size_t i, std::size_t j) const;

 private:
  std::size_t rows_ = 0;
  std::size_t points_ = 0;
  std::size_t input_dim_ = 0;
  DerivativeRequest request_;
  Eigen::MatrixXd data_;
};

/// Outputs and input derivatives at a batch of points, no tape.
/// Throws on dimension mismatch and on non-finite activations (the error
/// carries the layer index).
DualTrace evaluate_with_input_derivatives(const NetworkSpec& spec, ParamView params, const PointSet& x,
                                          const DerivativeRequest& request,
                                          const DropoutMasks* masks = nullptr);

/// One recorded network evaluation.  Losses read `out` and write d(loss)/d(out)
/// into `adjoint` (same layout, zero-initialized).
struct NetworkPass {
  DualTrace out;
  DualTrace adjoint;

  struct Layer {
    Eigen::MatrixXd input;        // stacked channels entering the affine map
    Eigen::MatrixXd pre;          // stacked pre-activation channels
    Eigen::ArrayXXd tanh_value;   // hidden layers only: tanh(pre value channel)
    Eigen::ArrayXXd mask;         // empty when no dropout
  };
  std::vector<Layer> layers;
  const NetworkSpec* spec = nullptr;
  Eigen::VectorXd params;
  std::size_t param_offset = 0;     // where this network's params live in the tape
};

/// Reverse-mode tape.  Each recorded pass keeps its intermediate activations;
/// backward() replays them in reverse and accumulates one adjoint per
/// parameter.  A tape belongs to a single thread.
class GradientTape {
 public:
  explicit GradientTape(std::size_t n_params);

  std::size_t param_count() const { return static_cast<std::size_t>(adjoints_.size()); }

  /// Evaluates and records.  `param_offset` lets several networks share a
  /// tape (their parameters concatenated).  The returned reference remains
  /// valid until the tape is destroyed.
  NetworkPass& record(const NetworkSpec& spec, ParamView params, const PointSet& x,
                      const DerivativeRequest& request, const DropoutMasks* masks = nullptr,
                      std::size_t param_offset = 0);

  /// Direct d(loss)/d(theta) contributions (prior, parameter-space terms).
  void add_param_adjoint(const Eigen::Ref<const Eigen::VectorXd>& g, double scale = 1.0,
                         std::size_t offset = 0);

  /// Replays every recorded pass and returns the accumulated adjoints.
  const Eigen::VectorXd& backward();

 private:
  std::deque<NetworkPass> passes_;
  Eigen::VectorXd adjoints_;
  bool replayed_ = false;
};

/// A scalar loss that evaluates networks through the tape it is handed and
/// seeds their output adjoints.
using TapedLoss = std::function<double(ParamView, GradientTape&)>;

struct LossAndGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// Value and exact gradient of `loss` at `params`.  Throws Error(kNonFinite)
/// when the loss or any gradient entry is not finite.
LossAndGradient loss_gradient(const TapedLoss& loss, ParamView params);

}  // namespace pinnuq
