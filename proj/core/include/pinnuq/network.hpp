#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace pinnuq {

/// Flat parameter vector of a network: per layer the weight matrix
/// (column-major, fan_out x fan_in) followed by the bias vector.
using ParamVector = Eigen::VectorXd;
using ParamView = Eigen::Ref<const Eigen::VectorXd>;

/// Points are stored column-wise: one column per point, one row per input.
using PointSet = Eigen::MatrixXd;

/// Affine map applied to raw inputs before the first layer:
/// x_net = (x - shift) / scale.
struct InputNormalization {
  std::vector<double> shift;
  std::vector<double> scale;

  static InputNormalization identity(std::size_t dim);
  /// Zero mean / unit variance over the given points.
  static InputNormalization fit(const PointSet& points);
};

/// Fully connected tanh network.  Hidden layers use tanh, the output layer is
/// linear.  Dropout (inverted scaling) follows every hidden layer.
struct NetworkSpec {
  std::vector<std::size_t> layer_widths;
  double dropout_rate = 0.0;
  InputNormalization normalization;
  /// Weights start as U(-gain/sqrt(fan_in), gain/sqrt(fan_in)).
  double init_gain = 1.0;

  NetworkSpec() = default;
  NetworkSpec(std::vector<std::size_t> widths, double dropout = 0.0);

  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t output_dim() const { return layer_widths.back(); }
  std::size_t layer_count() const { return layer_widths.size() - 1; }
  std::size_t hidden_layer_count() const { return layer_widths.size() - 2; }
  std::size_t param_count() const;
  /// Offset of layer l's weight block inside the flat vector; the bias
  /// block follows immediately.
  std::size_t weight_offset(std::size_t layer) const;

  /// Throws Error(kInvalidArgument) if the invariants do not hold.  A spec
  /// without hidden layers (a plain affine map) is accepted here; experiment
  /// configs require at least one.
  void validate() const;
};

/// Mask per hidden layer, shape (width x points), entries 0 or 1/(1-rate).
struct DropoutMasks {
  std::vector<Eigen::ArrayXXd> layers;
};

class DropoutMode {
 public:
  static DropoutMode off() { return DropoutMode(false, 0); }
  static DropoutMode stochastic(std::uint64_t seed) { return DropoutMode(true, seed); }

  bool is_stochastic() const { return stochastic_; }
  std::uint64_t seed() const { return seed_; }

 private:
  DropoutMode(bool s, std::uint64_t seed) : stochastic_(s), seed_(seed) {}
  bool stochastic_;
  std::uint64_t seed_;
};

/// Independent Bernoulli masks for every hidden unit at every point.
DropoutMasks sample_dropout_masks(const NetworkSpec& spec, std::size_t n_points, std::uint64_t seed);

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Network outputs, shape (output_dim x points).
Eigen::MatrixXd forward(const NetworkSpec& spec, ParamView params, const PointSet& x,
                        DropoutMode mode = DropoutMode::off());

/// Parameter file: a `# pinnuq-params` header line carrying the spec as JSON,
/// then one value per line in shortest round-trip decimal form.
void save_params(const std::filesystem::path& path, const NetworkSpec& spec, ParamView params);
std::pair<NetworkSpec, ParamVector> load_params(const std::filesystem::path& path);

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text);

}  // namespace pinnuq
