#include "pinnuq/network.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pinnuq/autodiff.hpp"
#include "pinnuq/error.hpp"
#include "pinnuq/rng.hpp"
#include "pinnuq/text.hpp"

namespace pinnuq {

InputNormalization InputNormalization::identity(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

InputNormalization InputNormalization::fit(const PointSet& points) {
  if (points.cols() == 0) throw invalid_argument("cannot fit a normalization to an empty point set");
  InputNormalization norm;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double mean = points.row(i).mean();
    const double var = (points.row(i).array() - mean).square().mean();
    norm.shift.push_back(mean);
    norm.scale.push_back(var > 0.0 ? std::sqrt(var) : 1.0);
  }
  return norm;
}

NetworkSpec::NetworkSpec(std::vector<std::size_t> widths, double dropout)
    : layer_widths(std::move(widths)), dropout_rate(dropout) {
  if (!layer_widths.empty()) normalization = InputNormalization::identity(layer_widths.front());
}

std::size_t NetworkSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
  return n;
}

std::size_t NetworkSpec::weight_offset(std::size_t layer) const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer; ++l) n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
  return n;
}

void NetworkSpec::validate() const {
  if (layer_widths.size() < 2) throw invalid_argument("network needs an input and an output layer");
  for (std::size_t w : layer_widths) {
    if (w == 0) throw invalid_argument("layer widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw invalid_argument("dropout rate must lie in [0, 1)");
  if (normalization.shift.size() != input_dim() || normalization.scale.size() != input_dim()) {
    throw invalid_argument("input normalization does not match the input dimension");
  }
  for (double s : normalization.scale) {
    if (!(s > 0.0) || !std::isfinite(s)) throw invalid_argument("normalization scale must be positive");
  }
  if (!(init_gain > 0.0)) throw invalid_argument("init gain must be positive");
}

DropoutMasks sample_dropout_masks(const NetworkSpec& spec, std::size_t n_points, std::uint64_t seed) {
  DropoutMasks masks;
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - spec.dropout_rate);
  for (std::size_t l = 1; l + 1 < spec.layer_widths.size(); ++l) {
    Eigen::ArrayXXd m(static_cast<Eigen::Index>(spec.layer_widths[l]), static_cast<Eigen::Index>(n_points));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = unif(rng) < spec.dropout_rate ? 0.0 : keep_scale;
    }
    masks.layers.push_back(std::move(m));
  }
  return masks;
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector params = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  Rng rng(seed);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t fan_in = spec.layer_widths[l];
    const std::size_t n_weights = fan_in * spec.layer_widths[l + 1];
    const double bound = spec.init_gain / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    const std::size_t off = spec.weight_offset(l);
    for (std::size_t k = 0; k < n_weights; ++k) params[static_cast<Eigen::Index>(off + k)] = unif(rng);
  }
  return params;
}

Eigen::MatrixXd forward(const NetworkSpec& spec, ParamView params, const PointSet& x, DropoutMode mode) {
  if (mode.is_stochastic() && spec.dropout_rate > 0.0) {
    const DropoutMasks masks = sample_dropout_masks(spec, static_cast<std::size_t>(x.cols()), mode.seed());
    return evaluate_with_input_derivatives(spec, params, x, DerivativeRequest::values_only(), &masks).stacked();
  }
  return evaluate_with_input_derivatives(spec, params, x, DerivativeRequest::values_only()).stacked();
}

std::string spec_to_json(const NetworkSpec& spec) {
  nlohmann::ordered_json j;
  j["layer_widths"] = spec.layer_widths;
  j["dropout_rate"] = spec.dropout_rate;
  j["init_gain"] = spec.init_gain;
  j["normalization_shift"] = spec.normalization.shift;
  j["normalization_scale"] = spec.normalization.scale;
  return j.dump();
}

NetworkSpec spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    NetworkSpec spec(j.at("layer_widths").get<std::vector<std::size_t>>(), j.at("dropout_rate").get<double>());
    spec.init_gain = j.value("init_gain", 1.0);
    spec.normalization.shift = j.at("normalization_shift").get<std::vector<double>>();
    spec.normalization.scale = j.at("normalization_scale").get<std::vector<double>>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("malformed network spec: ") + e.what());
  }
}

void save_params(const std::filesystem::path& path, const NetworkSpec& spec, ParamView params) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out << "# pinnuq-params " << spec_to_json(spec) << '\n';
  for (Eigen::Index k = 0; k < params.size(); ++k) out << format_double(params[k]) << '\n';
  if (!out) throw io_error("write failed: " + path.string());
}

std::pair<NetworkSpec, ParamVector> load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::string line;
  const std::string tag = "# pinnuq-params ";
  if (!std::getline(in, line) || line.rfind(tag, 0) != 0) throw io_error("missing parameter header", 1);
  NetworkSpec spec = spec_from_json(line.substr(tag.size()));
  ParamVector params(static_cast<Eigen::Index>(spec.param_count()));
  std::size_t line_no = 1;
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    ++line_no;
    if (!std::getline(in, line)) throw io_error("parameter file truncated", line_no);
    params[k] = parse_double(line, line_no);
  }
  return {std::move(spec), std::move(params)};
}

}  // namespace pinnuq
