#include "pinnuq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <boost/numeric/odeint.hpp>

#include "pinnuq/error.hpp"
#include "pinnuq/rng.hpp"
#include "pinnuq/text.hpp"

namespace pinnuq {

namespace odeint = boost::numeric::odeint;

// ---------------------------------------------------------------------------
// Van der Pol

Trajectory integrate_vdp(const VdpParams& params, double u0, double v0, double t_end, double tolerance,
                         std::size_t grid_points) {
  if (!(tolerance > 0.0)) throw invalid_argument("integration tolerance must be positive");
  if (!(t_end > 0.0)) throw invalid_argument("t_end must be positive");
  if (grid_points < 2) throw invalid_argument("trajectory grid needs at least two points");

  using State = std::array<double, 2>;
  const double eps = params.epsilon, w = params.omega0;
  auto rhs = [eps, w](const State& s, State& ds, double) {
    ds[0] = s[1];
    ds[1] = eps * w * (1.0 - s[0] * s[0]) * s[1] - w * w * s[0];
  };

  Trajectory out;
  out.times = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(grid_points), 0.0, t_end);
  out.values.resize(out.times.size());
  out.velocities.resize(out.times.size());
  std::vector<double> times(out.times.data(), out.times.data() + out.times.size());

  State state{u0, v0};
  Eigen::Index k = 0;
  auto observe = [&](const State& s, double) {
    if (!std::isfinite(s[0]) || !std::isfinite(s[1])) throw numeric_error("Van der Pol integration diverged");
    out.values[k] = s[0];
    out.velocities[k] = s[1];
    ++k;
  };
  auto stepper = odeint::make_dense_output(tolerance, tolerance, odeint::runge_kutta_dopri5<State>());
  try {
    odeint::integrate_times(stepper, rhs, state, times.begin(), times.end(), 1e-4 * t_end, observe,
                            odeint::max_step_checker(100000));
  } catch (const odeint::odeint_error& e) {
    throw numeric_error(std::string("Van der Pol integration: step-size underflow (") + e.what() + ")");
  }
  if (k != out.times.size()) throw numeric_error("Van der Pol integration stopped early");
  return out;
}

ObservationSet make_vdp_observations(const Trajectory& trajectory, std::size_t stride, double noise_sigma,
                                     std::uint64_t seed) {
  if (stride == 0 || stride >= trajectory.size()) {
    throw invalid_argument("observation stride must be in [1, trajectory length)");
  }
  if (!(noise_sigma >= 0.0)) throw invalid_argument("noise sigma must be non-negative");
  auto [points, values] = trajectory_subgrid(trajectory, stride);
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] += noise_sigma * noise(rng);
  ObservationSet obs;
  obs.points = std::move(points);
  obs.components.push_back({0, "u", std::move(values)});
  return obs;
}

std::pair<PointSet, Eigen::VectorXd> trajectory_subgrid(const Trajectory& trajectory, std::size_t stride) {
  if (stride == 0) throw invalid_argument("stride must be positive");
  const std::size_t n = (trajectory.size() - 1) / stride + 1;
  PointSet points(1, static_cast<Eigen::Index>(n));
  Eigen::VectorXd values(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(i * stride);
    points(0, static_cast<Eigen::Index>(i)) = trajectory.times[j];
    values[static_cast<Eigen::Index>(i)] = trajectory.values[j];
  }
  return {std::move(points), std::move(values)};
}

// ---------------------------------------------------------------------------
// Domains and sampling

bool Domain::contains(const Eigen::VectorXd& point) const {
  if (static_cast<std::size_t>(point.size()) != dim()) return false;
  for (std::size_t d = 0; d < dim(); ++d) {
    const double v = point[static_cast<Eigen::Index>(d)];
    if (v < lower[d] || v > upper[d]) return false;
  }
  return !(dim() == 2 && masked(point[0], point[1]));
}

void Domain::validate() const {
  if (lower.empty() || lower.size() != upper.size()) throw invalid_argument("domain bounds must be non-empty and congruent");
  for (std::size_t d = 0; d < dim(); ++d) {
    if (!(lower[d] < upper[d])) throw invalid_argument("domain bounds must satisfy lower < upper");
  }
  if (mask) {
    if (dim() != 2) throw invalid_argument("cylinder mask needs a 2-D domain");
    if (!(mask->radius > 0.0)) throw invalid_argument("cylinder radius must be positive");
    // The disc is convex, so it covers the box iff it covers every corner.
    if (mask->contains(lower[0], lower[1]) && mask->contains(lower[0], upper[1]) &&
        mask->contains(upper[0], lower[1]) && mask->contains(upper[0], upper[1])) {
      throw invalid_argument("cylinder mask covers the whole domain");
    }
  }
}

Domain rans_default_domain() { return {{-2.0, -3.0}, {8.0, 3.0}, CylinderMask{0.0, 0.0, 0.5}}; }

PointSet sample_collocation(const Domain& domain, std::size_t n, std::uint64_t seed) {
  domain.validate();
  if (n == 0) throw invalid_argument("need at least one collocation point");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(domain.dim());
  PointSet out(d, static_cast<Eigen::Index>(n));
  Eigen::VectorXd p(d);
  const std::size_t max_attempts = 1000 * n + 10000;
  std::size_t accepted = 0, attempts = 0;
  while (accepted < n) {
    if (++attempts > max_attempts) throw numeric_error("collocation rejection sampling made no progress");
    for (Eigen::Index k = 0; k < d; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      p[k] = domain.lower[kk] + (domain.upper[kk] - domain.lower[kk]) * unit(rng);
    }
    if (d == 2 && domain.masked(p[0], p[1])) continue;
    out.col(static_cast<Eigen::Index>(accepted++)) = p;
  }
  return out;
}

PointSet make_grid(const Domain& domain, std::size_t nx, std::size_t ny) {
  domain.validate();
  if (domain.dim() != 2) throw invalid_argument("make_grid needs a 2-D domain");
  if (nx < 2 || ny < 2) throw invalid_argument("grid needs at least 2 points per axis");
  const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(nx), domain.lower[0], domain.upper[0]);
  const Eigen::VectorXd ys = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(ny), domain.lower[1], domain.upper[1]);
  std::vector<std::array<double, 2>> kept;
  kept.reserve(nx * ny);
  for (Eigen::Index j = 0; j < ys.size(); ++j) {
    for (Eigen::Index i = 0; i < xs.size(); ++i) {
      if (!domain.masked(xs[i], ys[j])) kept.push_back({xs[i], ys[j]});
    }
  }
  PointSet out(2, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    out(0, static_cast<Eigen::Index>(k)) = kept[k][0];
    out(1, static_cast<Eigen::Index>(k)) = kept[k][1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid fields

PointSet GridField::points() const {
  PointSet p(2, x.size());
  p.row(0) = x.transpose();
  p.row(1) = y.transpose();
  return p;
}

void GridField::validate() const {
  if (x.size() != y.size() || values.rows() != static_cast<Eigen::Index>(rans::kOutputs) || values.cols() != x.size()) {
    throw dimension_error("grid field arrays are not congruent");
  }
  if (!x.allFinite() || !y.allFinite()) throw invalid_argument("grid coordinates must be finite");
  for (std::size_t k = 0; k < rans::kOutputs; ++k) {
    if (available[k] && !values.row(static_cast<Eigen::Index>(k)).allFinite()) {
      throw invalid_argument(std::string("grid field ") + rans_field_names()[k] + " has non-finite values");
    }
  }
}

const std::array<const char*, rans::kOutputs>& rans_field_names() {
  static const std::array<const char*, rans::kOutputs> names{"U", "V", "P", "fx", "fy"};
  return names;
}

std::optional<std::size_t> field_output(const std::string& name) {
  if (name == "u") return 0;
  const auto& names = rans_field_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (name == names[k]) return k;
  }
  return std::nullopt;
}

namespace {

// d^k/dz^k of each 1-D factor, k = 0..3.
using Derivs = std::array<double, 4>;

Derivs gaussian_derivs(double d, double s) {
  const double s2 = s * s;
  const double e = std::exp(-d * d / (2.0 * s2));
  return {e, -d / s2 * e, (d * d / (s2 * s2) - 1.0 / s2) * e, (-d * d * d / (s2 * s2 * s2) + 3.0 * d / (s2 * s2)) * e};
}

Derivs sin_derivs(double k, double z) {
  const double s = std::sin(z), c = std::cos(z);
  return {s, k * c, -k * k * s, -k * k * k * c};
}

Derivs cos_derivs(double k, double z) {
  const double s = std::sin(z), c = std::cos(z);
  return {c, -k * s, -k * k * c, k * k * k * s};
}

// Partial derivatives d^(i+j) / dx^i dy^j of a sum of terms, i, j <= 3.
using Partials = std::array<std::array<double, 4>, 4>;

Partials partials(const std::vector<SeparableTerm>& terms, double x, double y) {
  Partials out{};
  for (const auto& t : terms) {
    Derivs X{}, Y{};
    switch (t.kind) {
      case SeparableTerm::Kind::kGaussian:
        if (!(t.width > 0.0)) throw invalid_argument("Gaussian term width must be positive");
        X = gaussian_derivs(x - t.cx, t.width);
        Y = gaussian_derivs(y - t.cy, t.width);
        break;
      case SeparableTerm::Kind::kTrig:
        X = sin_derivs(t.kx, t.kx * x + t.phase);
        Y = cos_derivs(t.ky, t.ky * y);
        break;
      case SeparableTerm::Kind::kLinearY:
        X = {1.0, 0.0, 0.0, 0.0};
        Y = {y, 1.0, 0.0, 0.0};
        break;
    }
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; i + j <= 3; ++j) out[i][j] += t.amplitude * X[i] * Y[j];
    }
  }
  return out;
}

}  // namespace

ManufacturedRans ManufacturedRans::wake_like(double reynolds) {
  using K = SeparableTerm::Kind;
  ManufacturedRans m;
  m.reynolds = reynolds;
  m.stream = {
      {K::kLinearY, 1.0},
      {K::kGaussian, -0.35, 1.5, 0.6, 0.8},
      {K::kGaussian, 0.35, 1.5, -0.6, 0.8},
      {K::kTrig, 0.03, 0.0, 0.0, 1.0, 0.8, 0.5, 0.0},
  };
  m.pressure = {
      {K::kGaussian, -0.3, 0.5, 0.0, 1.0},
      {K::kTrig, 0.05, 0.0, 0.0, 1.0, 0.4, 0.0, 0.0},
  };
  return m;
}

double ManufacturedRans::stream_function(double x, double y) const { return partials(stream, x, y)[0][0]; }

RansFieldsAtPoint ManufacturedRans::at(double x, double y) const {
  if (!(reynolds > 0.0)) throw invalid_argument("Reynolds number must be positive");
  const Partials s = partials(stream, x, y);
  const Partials p = partials(pressure, x, y);
  RansFieldsAtPoint f;
  f.Re = reynolds;
  f.U = s[0][1];
  f.V = -s[1][0];
  f.U_x = s[1][1];
  f.U_y = s[0][2];
  f.V_x = -s[2][0];
  f.V_y = -s[1][1];
  f.U_xx = s[2][1];
  f.U_yy = s[0][3];
  f.V_xx = -s[3][0];
  f.V_yy = -s[1][2];
  f.P = p[0][0];
  f.P_x = p[1][0];
  f.P_y = p[0][1];
  f.fx = 0.0;
  f.fy = 0.0;
  const auto r = rans_residuals(f);
  f.fx = -r[0];
  f.fy = -r[1];
  return f;
}

GridField manufactured_rans(const ManufacturedRans& field, const PointSet& points, std::optional<CylinderMask> mask) {
  if (points.rows() != 2) throw dimension_error("manufactured RANS fields need 2-D points");
  GridField g;
  g.x = points.row(0).transpose();
  g.y = points.row(1).transpose();
  g.values.resize(static_cast<Eigen::Index>(rans::kOutputs), points.cols());
  g.available.fill(true);
  g.mask = mask;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const RansFieldsAtPoint f = field.at(points(0, j), points(1, j));
    g.values.col(j) << f.U, f.V, f.P, f.fx, f.fy;
  }
  return g;
}

GridField load_grid_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open grid file " + path);
  std::string line;
  if (!std::getline(is, line)) throw io_error("grid file " + path + " is empty", 1);
  const auto header = split_csv_line(line);
  std::vector<int> column;   // -2: x, -1: y, k: field k
  bool has_x = false, has_y = false;
  std::set<std::string> seen;
  for (const auto h : header) {
    const std::string name(h);
    if (!seen.insert(name).second) throw io_error("duplicate column '" + name + "'", 1);
    if (name == "x") {
      column.push_back(-2);
      has_x = true;
    } else if (name == "y") {
      column.push_back(-1);
      has_y = true;
    } else if (const auto k = field_output(name); k && name != "u") {
      column.push_back(static_cast<int>(*k));
    } else {
      throw io_error("unknown column '" + name + "'", 1);
    }
  }
  if (!has_x || !has_y) throw io_error("grid header needs x and y columns", 1);

  std::vector<std::array<double, 2 + rans::kOutputs>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != column.size()) {
      throw io_error("expected " + std::to_string(column.size()) + " fields, got " + std::to_string(fields.size()),
                     lineno);
    }
    std::array<double, 2 + rans::kOutputs> r{};
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const double v = parse_double(fields[c], lineno);
      if (!std::isfinite(v)) throw io_error("non-finite value", lineno);
      r[static_cast<std::size_t>(column[c] + 2)] = v;
    }
    rows.push_back(r);
  }

  GridField g;
  const auto n = static_cast<Eigen::Index>(rows.size());
  g.x.resize(n);
  g.y.resize(n);
  g.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rans::kOutputs), n);
  for (const int c : column) {
    if (c >= 0) g.available[static_cast<std::size_t>(c)] = true;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = rows[static_cast<std::size_t>(j)];
    g.x[j] = r[0];
    g.y[j] = r[1];
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(rans::kOutputs); ++k) g.values(k, j) = r[static_cast<std::size_t>(k + 2)];
  }
  return g;
}

void save_grid_csv(const std::string& path, const GridField& grid) {
  grid.validate();
  std::ofstream os(path);
  if (!os) throw io_error("cannot write grid file " + path);
  os << "x,y";
  for (std::size_t k = 0; k < rans::kOutputs; ++k) {
    if (grid.available[k]) os << ',' << rans_field_names()[k];
  }
  os << '\n';
  for (Eigen::Index j = 0; j < grid.x.size(); ++j) {
    os << format_double(grid.x[j]) << ',' << format_double(grid.y[j]);
    for (std::size_t k = 0; k < rans::kOutputs; ++k) {
      if (grid.available[k]) os << ',' << format_double(grid.values(static_cast<Eigen::Index>(k), j));
    }
    os << '\n';
  }
  if (!os) throw io_error("failed writing grid file " + path);
}

// ---------------------------------------------------------------------------
// Observations

namespace {

void draw_without_replacement(std::vector<Eigen::Index>& pool, std::size_t count, Rng& rng,
                              std::vector<Eigen::Index>& out) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    out.push_back(pool[i]);
  }
}

}  // namespace

std::vector<Eigen::Index> select_observation_indices(const PointSet& candidates, const Domain& domain,
                                                     const ObservationLayout& layout, std::uint64_t seed) {
  domain.validate();
  if (candidates.rows() != 2 || domain.dim() != 2) throw dimension_error("observation layout needs 2-D points");
  const auto& [px0, px1, py0, py1] = layout.patch;
  std::vector<Eigen::Index> boundary, patch;
  for (Eigen::Index j = 0; j < candidates.cols(); ++j) {
    const double x = candidates(0, j), y = candidates(1, j);
    if (!domain.contains(candidates.col(j))) continue;
    const double edge = std::min({x - domain.lower[0], domain.upper[0] - x, y - domain.lower[1], domain.upper[1] - y});
    if (x >= px0 && x <= px1 && y >= py0 && y <= py1) {
      patch.push_back(j);
    } else if (edge < layout.boundary_width) {
      boundary.push_back(j);
    }
  }
  if (boundary.size() < layout.n_boundary) throw invalid_argument("too few boundary candidates for the observation layout");
  if (patch.size() < layout.n_patch) throw invalid_argument("too few patch candidates for the observation layout");
  Rng rng(seed);
  std::vector<Eigen::Index> out;
  draw_without_replacement(boundary, layout.n_boundary, rng, out);
  draw_without_replacement(patch, layout.n_patch, rng, out);
  std::sort(out.begin(), out.end());
  return out;
}

ObservationSet make_field_observations(const GridField& grid, const std::vector<Eigen::Index>& indices,
                                       const std::vector<std::size_t>& outputs, double noise_sigma,
                                       std::uint64_t seed) {
  grid.validate();
  if (!(noise_sigma >= 0.0)) throw invalid_argument("noise sigma must be non-negative");
  ObservationSet obs;
  obs.points.resize(2, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Eigen::Index j = indices[i];
    if (j < 0 || j >= grid.x.size()) throw dimension_error("observation index out of range");
    obs.points(0, static_cast<Eigen::Index>(i)) = grid.x[j];
    obs.points(1, static_cast<Eigen::Index>(i)) = grid.y[j];
  }
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const std::size_t k : outputs) {
    if (k >= rans::kOutputs || !grid.available[k]) throw invalid_argument("observed field is not available on the grid");
    Eigen::VectorXd v(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
      v[static_cast<Eigen::Index>(i)] = grid.values(static_cast<Eigen::Index>(k), indices[i]) + noise_sigma * noise(rng);
    }
    obs.components.push_back({k, rans_field_names()[k], std::move(v)});
  }
  return obs;
}

void save_observations_csv(const std::string& path, const ObservationSet& obs,
                           const std::map<std::string, double>& sigma) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot write observation file " + path);
  os << "x,y,var,value,sigma\n";
  const bool two_d = obs.points.rows() == 2;
  for (Eigen::Index j = 0; j < obs.points.cols(); ++j) {
    for (const auto& c : obs.components) {
      const auto it = sigma.find(c.name);
      if (it == sigma.end()) throw invalid_argument("no sigma for observed variable " + c.name);
      os << format_double(obs.points(0, j)) << ',' << format_double(two_d ? obs.points(1, j) : 0.0) << ',' << c.name
         << ',' << format_double(c.values[j]) << ',' << format_double(it->second) << '\n';
    }
  }
  if (!os) throw io_error("failed writing observation file " + path);
}

ObservationFile load_observations_csv(const std::string& path, std::size_t input_dim) {
  if (input_dim != 1 && input_dim != 2) throw invalid_argument("observation input dimension must be 1 or 2");
  std::ifstream is(path);
  if (!is) throw io_error("cannot open observation file " + path);
  std::string line;
  if (!std::getline(is, line)) throw io_error("observation file " + path + " is empty", 1);
  const auto header = split_csv_line(line);
  const std::vector<std::string_view> expected{"x", "y", "var", "value", "sigma"};
  if (header != expected) throw io_error("observation header must be x,y,var,value,sigma", 1);

  std::map<std::pair<double, double>, std::size_t> point_index;
  std::vector<std::pair<double, double>> points;
  std::map<std::string, std::map<std::size_t, double>> values;
  std::vector<std::string> order;
  ObservationFile out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw io_error("expected 5 fields, got " + std::to_string(f.size()), lineno);
    const double x = parse_double(f[0], lineno);
    const double y = input_dim == 2 ? parse_double(f[1], lineno) : 0.0;
    const std::string var(f[2]);
    const double value = parse_double(f[3], lineno), s = parse_double(f[4], lineno);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(value)) throw io_error("non-finite value", lineno);
    if (!field_output(var)) throw io_error("unknown variable '" + var + "'", lineno);
    if (!(s > 0.0)) throw io_error("sigma must be positive", lineno);
    if (const auto it = out.sigma.find(var); it == out.sigma.end()) {
      out.sigma[var] = s;
      order.push_back(var);
    } else if (it->second != s) {
      throw io_error("sigma of '" + var + "' differs between rows", lineno);
    }
    const auto [it, inserted] = point_index.try_emplace({x, y}, points.size());
    if (inserted) points.push_back({x, y});
    if (!values[var].emplace(it->second, value).second) throw io_error("duplicate value of '" + var + "'", lineno);
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  out.observations.points.resize(static_cast<Eigen::Index>(input_dim), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out.observations.points(0, j) = points[static_cast<std::size_t>(j)].first;
    if (input_dim == 2) out.observations.points(1, j) = points[static_cast<std::size_t>(j)].second;
  }
  for (const auto& var : order) {
    const auto& vals = values[var];
    if (static_cast<Eigen::Index>(vals.size()) != n) throw io_error("variable '" + var + "' is missing at some points");
    Eigen::VectorXd v(n);
    for (const auto& [j, value] : vals) v[static_cast<Eigen::Index>(j)] = value;
    out.observations.components.push_back({*field_output(var), var, std::move(v)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assembled experiment data

ExperimentDataset make_vdp_dataset(const VdpDataConfig& config, std::uint64_t seed) {
  const Trajectory traj =
      integrate_vdp(config.params, config.u0, config.v0, config.t_end, config.tolerance, config.grid_points);
  ExperimentDataset d;
  d.seed = seed;
  d.noise_sigma = config.noise_sigma;
  d.observations = make_vdp_observations(traj, config.stride, config.noise_sigma, derive_seed(seed, 0));
  d.collocation = sample_collocation(Domain::interval(0.0, config.t_end), config.n_collocation, derive_seed(seed, 1));
  auto [points, truth] = trajectory_subgrid(traj, config.test_stride);
  d.test_points = std::move(points);
  d.test_truth = truth.transpose();
  d.truth_outputs = {0};
  return d;
}

ExperimentDataset make_rans_dataset(const ManufacturedRans& field, const RansDataConfig& config, std::uint64_t seed) {
  const PointSet grid_points = make_grid(config.domain, config.grid_nx, config.grid_ny);
  return make_rans_dataset(manufactured_rans(field, grid_points, config.domain.mask), config, seed);
}

ExperimentDataset make_rans_dataset(const GridField& grid, const RansDataConfig& config, std::uint64_t seed) {
  grid.validate();
  config.domain.validate();
  const PointSet all = grid.points();
  std::vector<Eigen::Index> inside;
  for (Eigen::Index j = 0; j < all.cols(); ++j) {
    if (config.domain.contains(all.col(j))) inside.push_back(j);
  }
  if (inside.empty()) throw invalid_argument("no grid points inside the domain");

  ExperimentDataset d;
  d.seed = seed;
  d.noise_sigma = config.noise_sigma;
  const auto idx = select_observation_indices(all, config.domain, config.layout, derive_seed(seed, 0));
  std::vector<std::size_t> observed;
  for (const std::size_t k : {rans::kU, rans::kV, rans::kFx, rans::kFy}) {
    if (grid.available[k]) observed.push_back(k);
  }
  if (observed.empty()) throw invalid_argument("grid has none of U, V, fx, fy");
  d.observations = make_field_observations(grid, idx, observed, config.noise_sigma, derive_seed(seed, 1));
  d.collocation = sample_collocation(config.domain, config.n_collocation, derive_seed(seed, 2));
  d.test_points.resize(2, static_cast<Eigen::Index>(inside.size()));
  d.test_truth.resize(static_cast<Eigen::Index>(rans::kOutputs), static_cast<Eigen::Index>(inside.size()));
  for (std::size_t i = 0; i < inside.size(); ++i) {
    d.test_points.col(static_cast<Eigen::Index>(i)) = all.col(inside[i]);
    d.test_truth.col(static_cast<Eigen::Index>(i)) = grid.values.col(inside[i]);
  }
  for (std::size_t k = 0; k < rans::kOutputs; ++k) {
    if (grid.available[k]) d.truth_outputs.push_back(k);
  }
  return d;
}

}  // namespace pinnuq
