#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace pinnuq {

enum class ErrorKind {
  kDimension,   // shape / length mismatch
  kNonFinite,   // NaN or Inf in a value, gradient or activation
  kInvalidArgument,
  kConfig,
  kIo,
  kNumeric,     // divergence, degenerate statistics, sampler failure
};

/// Exception type thrown by every module.  The optional location fields say
/// where a numeric failure happened (network layer, collocation point,
/// training stage and iteration, CSV line).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  std::optional<std::size_t> layer;
  std::optional<std::size_t> point;
  std::optional<std::size_t> line;
  std::optional<std::string> stage;
  std::optional<std::size_t> iteration;

 private:
  ErrorKind kind_;
};

inline Error dimension_error(const std::string& what) { return Error(ErrorKind::kDimension, what); }
inline Error invalid_argument(const std::string& what) { return Error(ErrorKind::kInvalidArgument, what); }
inline Error numeric_error(const std::string& what) { return Error(ErrorKind::kNumeric, what); }

inline Error non_finite_at_layer(std::size_t layer_index) {
  Error e(ErrorKind::kNonFinite, "non-finite activation in layer " + std::to_string(layer_index));
  e.layer = layer_index;
  return e;
}

inline Error non_finite_at_point(const std::string& what, std::size_t point_index) {
  Error e(ErrorKind::kNonFinite, what + " at point " + std::to_string(point_index));
  e.point = point_index;
  return e;
}

inline Error io_error(const std::string& what, std::optional<std::size_t> line_number = std::nullopt) {
  Error e(ErrorKind::kIo, line_number ? what + " (line " + std::to_string(*line_number) + ")" : what);
  e.line = line_number;
  return e;
}

}  // namespace pinnuq
