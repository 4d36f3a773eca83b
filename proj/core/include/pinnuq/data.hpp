#pragma once
// Reference solutions, synthetic observations, point sampling and CSV
// exchange.
//
// CSV schemas:
//   grid          x,y,U,V,P,fx,fy   (field columns optional, any order)
//   observations  x,y,var,value,sigma   (long format, one row per value)

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pinnuq/network.hpp"
#include "pinnuq/physics.hpp"
#include "pinnuq/posterior.hpp"

namespace pinnuq {

// ---------------------------------------------------------------------------
// Van der Pol

struct Trajectory {
  Eigen::VectorXd times;        // uniform, strictly increasing
  Eigen::VectorXd values;       // u(t)
  Eigen::VectorXd velocities;   // du/dt

  std::size_t size() const { return static_cast<std::size_t>(times.size()); }
};

/// Adaptive Dormand-Prince 5(4) on (u, du/dt) with relative and absolute
/// tolerance `tolerance`, sampled by dense output on `grid_points` uniform
/// times in [0, t_end].  Throws a numeric error when the step size underflows.
Trajectory integrate_vdp(const VdpParams& params, double u0, double v0, double t_end, double tolerance,
                         std::size_t grid_points = 180001);

/// Every stride-th trajectory sample (index 0 first) plus N(0, noise_sigma^2)
/// noise, as observations of output 0 named "u".
ObservationSet make_vdp_observations(const Trajectory& trajectory, std::size_t stride = 1500,
                                     double noise_sigma = 0.05, std::uint64_t seed = 0);

/// Every stride-th trajectory time as a 1 x K point set with the exact values.
std::pair<PointSet, Eigen::VectorXd> trajectory_subgrid(const Trajectory& trajectory, std::size_t stride);

// ---------------------------------------------------------------------------
// Domains and sampling

struct CylinderMask {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.5;

  bool contains(double x, double y) const { return (x - cx) * (x - cx) + (y - cy) * (y - cy) < radius * radius; }
};

/// Axis-aligned box, optionally with a circular hole (2-D only).
struct Domain {
  std::vector<double> lower;
  std::vector<double> upper;
  std::optional<CylinderMask> mask;

  std::size_t dim() const { return lower.size(); }
  bool contains(const Eigen::VectorXd& point) const;
  bool masked(double x, double y) const { return mask && mask->contains(x, y); }
  /// Throws on empty or inverted bounds, a mask in 1-D, or a mask covering the box.
  void validate() const;

  static Domain interval(double a, double b) { return {{a}, {b}, std::nullopt}; }
};

/// [-2, 8] x [-3, 3] with the unit-diameter cylinder at the origin.
Domain rans_default_domain();

/// n i.i.d. uniform points in the domain, masked region rejected.
PointSet sample_collocation(const Domain& domain, std::size_t n, std::uint64_t seed);

/// Tensor grid of nx x ny points over the box (column-major in x), masked
/// points dropped.
PointSet make_grid(const Domain& domain, std::size_t nx, std::size_t ny);

// ---------------------------------------------------------------------------
// Grid fields

/// Fields in RANS output order (U, V, P, fx, fy) at scattered points.
struct GridField {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::MatrixXd values;   // 5 x n; rows of unavailable fields are zero
  std::array<bool, rans::kOutputs> available{};
  std::optional<CylinderMask> mask;

  std::size_t size() const { return static_cast<std::size_t>(x.size()); }
  PointSet points() const;
  /// Throws on incongruent lengths or non-finite entries.
  void validate() const;
};

const std::array<const char*, rans::kOutputs>& rans_field_names();
/// Output index of a field name (U, V, P, fx, fy; "u" for Van der Pol).
std::optional<std::size_t> field_output(const std::string& name);

/// One separable stream-function or pressure term a * X(x) * Y(y).
struct SeparableTerm {
  enum class Kind { kGaussian, kTrig, kLinearY };
  Kind kind = Kind::kGaussian;
  double amplitude = 0.0;
  double cx = 0.0, cy = 0.0, width = 1.0;   // Gaussian centre and width
  double kx = 0.0, ky = 0.0, phase = 0.0;  // sin(kx x + phase) * cos(ky y)
};

struct ManufacturedRans {
  double reynolds = 3900.0;
  std::vector<SeparableTerm> stream;     // psi
  std::vector<SeparableTerm> pressure;   // P

  /// Uniform stream plus a counter-rotating Gaussian pair behind the
  /// cylinder and a weak travelling-wave term; Gaussian pressure deficit.
  static ManufacturedRans wake_like(double reynolds = 3900.0);

  /// All fields and the derivatives the residual operator consumes, in
  /// closed form.
  RansFieldsAtPoint at(double x, double y) const;
  double stream_function(double x, double y) const;
};

/// Emits U, V, P, fx, fy at the given points (all available).
GridField manufactured_rans(const ManufacturedRans& field, const PointSet& points,
                            std::optional<CylinderMask> mask = std::nullopt);

GridField load_grid_csv(const std::string& path);
void save_grid_csv(const std::string& path, const GridField& grid);

// ---------------------------------------------------------------------------
// Observations

/// Where RANS observations come from: points within `boundary_width` of the
/// box edges plus a rectangular patch (the near-wake region by default).
struct ObservationLayout {
  std::size_t n_boundary = 60;
  double boundary_width = 0.5;
  std::size_t n_patch = 60;
  std::array<double, 4> patch{0.6, 3.0, -1.0, 1.0};   // xmin, xmax, ymin, ymax
};

/// Indices into `candidates` (2 x n) following the layout, drawn without
/// replacement.  Throws when a region has too few candidates.
std::vector<Eigen::Index> select_observation_indices(const PointSet& candidates, const Domain& domain,
                                                     const ObservationLayout& layout, std::uint64_t seed);

/// Noisy observations of the listed fields at grid[indices].
ObservationSet make_field_observations(const GridField& grid, const std::vector<Eigen::Index>& indices,
                                       const std::vector<std::size_t>& outputs, double noise_sigma,
                                       std::uint64_t seed);

struct ObservationFile {
  ObservationSet observations;
  std::map<std::string, double> sigma;   // per variable
};

/// Input dimension 1 writes y = 0.
void save_observations_csv(const std::string& path, const ObservationSet& obs,
                           const std::map<std::string, double>& sigma);
ObservationFile load_observations_csv(const std::string& path, std::size_t input_dim);

// ---------------------------------------------------------------------------
// Assembled experiment data

struct ExperimentDataset {
  ObservationSet observations;
  PointSet collocation;
  PointSet test_points;
  Eigen::MatrixXd test_truth;   // outputs x test points
  std::vector<std::size_t> truth_outputs;   // rows of test_truth with ground truth
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

struct VdpDataConfig {
  VdpParams params;
  double u0 = 1.0;
  double v0 = 0.0;
  double t_end = 1.5;
  double tolerance = 1e-10;
  std::size_t grid_points = 180001;
  std::size_t stride = 1500;
  double noise_sigma = 0.05;
  std::size_t n_collocation = 120;
  std::size_t test_stride = 180;   // 1,001 test times on the fine grid
};

ExperimentDataset make_vdp_dataset(const VdpDataConfig& config, std::uint64_t seed);

struct RansDataConfig {
  Domain domain = rans_default_domain();
  ObservationLayout layout;
  double noise_sigma = 0.05;
  std::size_t n_collocation = 2000;
  std::size_t grid_nx = 101;   // candidate / test grid (manufactured fields)
  std::size_t grid_ny = 61;
};

/// Observations of U, V, fx, fy and test truth for all five fields from the
/// manufactured solution on the config grid.
ExperimentDataset make_rans_dataset(const ManufacturedRans& field, const RansDataConfig& config, std::uint64_t seed);

/// Same from an external grid; test truth rows exist only for available
/// fields, observations use the available ones among U, V, fx, fy.
ExperimentDataset make_rans_dataset(const GridField& grid, const RansDataConfig& config, std::uint64_t seed);

}  // namespace pinnuq
