#include "pinnuq/uq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "pinnuq/error.hpp"
#include "pinnuq/rng.hpp"
#include "pinnuq/text.hpp"

namespace pinnuq {

// ---------------------------------------------------------------------------
// Predictive statistics

void PredictiveAccumulator::add(const Eigen::MatrixXd& prediction) {
  if (n_ == 0) {
    mean_ = Eigen::MatrixXd::Zero(prediction.rows(), prediction.cols());
    m2_ = mean_;
  } else if (prediction.rows() != mean_.rows() || prediction.cols() != mean_.cols()) {
    throw dimension_error("prediction shape differs from earlier samples");
  }
  ++n_;
  const Eigen::ArrayXXd delta = prediction - mean_;
  mean_.array() += delta / static_cast<double>(n_);
  m2_.array() += delta * (prediction - mean_).array();
}

PredictiveSummary PredictiveAccumulator::summary() const {
  if (n_ < 2) throw invalid_argument("predictive statistics need at least two samples");
  PredictiveSummary s;
  s.mean = mean_;
  s.std = (m2_.array().max(0.0) / static_cast<double>(n_)).sqrt().matrix();
  s.samples = n_;
  return s;
}

PredictiveSummary predictive_stats(const std::vector<Eigen::MatrixXd>& predictions) {
  if (predictions.size() < 2) throw invalid_argument("predictive statistics need at least two samples");
  PredictiveAccumulator acc;
  for (const auto& p : predictions) acc.add(p);
  PredictiveSummary s = acc.summary();
  // Exactly zero spread when every sample is identical.
  for (Eigen::Index j = 0; j < s.std.cols(); ++j) {
    for (Eigen::Index k = 0; k < s.std.rows(); ++k) {
      if (s.std(k, j) == 0.0) continue;
      const double first = predictions.front()(k, j);
      bool same = true;
      for (const auto& p : predictions) same = same && p(k, j) == first;
      if (same) {
        s.std(k, j) = 0.0;
        s.mean(k, j) = first;
      }
    }
  }
  return s;
}

PredictiveSummary predict_from_samples(const NetworkSpec& net, const Eigen::MatrixXd& samples, const PointSet& points) {
  if (static_cast<std::size_t>(samples.cols()) != net.param_count()) {
    throw dimension_error("sample width differs from the network parameter count");
  }
  PredictiveAccumulator acc;
  for (Eigen::Index s = 0; s < samples.rows(); ++s) {
    const ParamVector theta = samples.row(s).transpose();
    acc.add(forward(net, theta, points));
  }
  return acc.summary();
}

PredictiveSummary predict_from_ensemble(const NetworkSpec& net, const std::vector<ParamVector>& members,
                                        const PointSet& points) {
  PredictiveAccumulator acc;
  for (const auto& m : members) acc.add(forward(net, m, points));
  return acc.summary();
}

PredictiveSummary mc_dropout_predict(const NetworkSpec& net, ParamView params, const PointSet& points,
                                     std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw invalid_argument("MC dropout needs at least two passes");
  PredictiveAccumulator acc;
  if (net.dropout_rate == 0.0) {
    const Eigen::MatrixXd y = forward(net, params, points);
    PredictiveSummary s;
    s.mean = y;
    s.std = Eigen::MatrixXd::Zero(y.rows(), y.cols());
    s.samples = n_samples;
    s.warnings.push_back("dropout rate is 0: every pass is identical and the predictive std is 0");
    return s;
  }
  for (std::size_t s = 0; s < n_samples; ++s) {
    acc.add(forward(net, params, points, DropoutMode::stochastic(derive_seed(seed, s))));
  }
  return acc.summary();
}

// ---------------------------------------------------------------------------
// Recalibration

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw invalid_argument("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw invalid_argument("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Eigen::VectorXd floor_sigma(const Eigen::VectorXd& sigma, bool* collapsed, double floor) {
  Eigen::VectorXd out = sigma;
  bool any = false;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (std::isnan(out[i])) throw Error(ErrorKind::kNonFinite, "predictive sigma is NaN at point " + std::to_string(i));
    if (out[i] < floor) {
      out[i] = floor;
      any = true;
    }
  }
  if (collapsed) *collapsed = any;
  return out;
}

namespace {

void check_congruent(const Eigen::VectorXd& truth, const Eigen::VectorXd& mean, const Eigen::VectorXd& sigma) {
  if (truth.size() == 0) throw invalid_argument("empty evaluation arrays");
  if (truth.size() != mean.size() || truth.size() != sigma.size()) throw dimension_error("evaluation array lengths differ");
}

}  // namespace

double recalibration_factor(const Eigen::VectorXd& truth, const Eigen::VectorXd& mean, const Eigen::VectorXd& sigma) {
  check_congruent(truth, mean, sigma);
  const Eigen::VectorXd s = floor_sigma(sigma);
  std::vector<double> ratios(static_cast<std::size_t>(truth.size()));
  for (Eigen::Index i = 0; i < truth.size(); ++i) ratios[static_cast<std::size_t>(i)] = std::abs(truth[i] - mean[i]) / s[i];
  const double alpha = 0.5 * empirical_quantile(std::move(ratios), 0.95);
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw numeric_error("degenerate recalibration factor " + format_double(alpha) +
                        "; review the sigma floor and the evaluation errors");
  }
  return alpha;
}

PredictiveSummary apply_recalibration(const PredictiveSummary& summary, const std::map<std::size_t, double>& alpha,
                                      const std::optional<PressureRule>& pressure) {
  PredictiveSummary out = summary;
  for (Eigen::Index k = 0; k < summary.std.rows(); ++k) {
    const auto row = static_cast<std::size_t>(k);
    double a = 0.0;
    if (pressure && row == pressure->pressure) {
      const auto u = alpha.find(pressure->u), v = alpha.find(pressure->v);
      if (u == alpha.end() || v == alpha.end()) throw invalid_argument("pressure factor needs both velocity factors");
      a = pressure_alpha(u->second, v->second);
    } else {
      const auto it = alpha.find(row);
      if (it == alpha.end()) throw invalid_argument("no recalibration factor for output " + std::to_string(row));
      a = it->second;
    }
    if (!(a > 0.0) || !std::isfinite(a)) throw invalid_argument("recalibration factors must be positive");
    out.std.row(k) *= a;
  }
  return out;
}

CoverageMetrics coverage_metrics(const Eigen::VectorXd& truth, const Eigen::VectorXd& mean, const Eigen::VectorXd& sigma) {
  check_congruent(truth, mean, sigma);
  CoverageMetrics m;
  const Eigen::VectorXd s = floor_sigma(sigma, &m.collapsed);
  std::size_t in2 = 0, in1 = 0;
  double sq = 0.0, ratio_sum = 0.0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    const double e = std::abs(truth[i] - mean[i]);
    if (e < 2.0 * s[i]) ++in2;
    if (e < s[i]) ++in1;
    const double r = e / s[i];
    ratio_sum += r;
    m.max_ratio = std::max(m.max_ratio, r);
    m.max_error = std::max(m.max_error, e);
    sq += e * e;
  }
  const auto n = static_cast<double>(truth.size());
  m.coverage = 100.0 * static_cast<double>(in2) / n;
  m.coverage_1sigma = 100.0 * static_cast<double>(in1) / n;
  m.mean_ratio = ratio_sum / n;
  m.rmse = std::sqrt(sq / n);
  return m;
}

// ---------------------------------------------------------------------------
// Calibration report

const VariableCalibration* CalibrationReport::find(const std::string& name) const {
  for (const auto& v : variables) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

CalibrationResult calibrate(const PredictiveSummary& summary, const std::vector<EvalVariable>& variables,
                            const CalibrationOptions& options) {
  if (variables.empty()) throw invalid_argument("no evaluation variables");
  std::set<std::string> names;
  for (const auto& v : variables) {
    if (!names.insert(v.name).second) throw invalid_argument("duplicate evaluation variable " + v.name);
    if (static_cast<Eigen::Index>(v.output) >= summary.mean.rows()) throw dimension_error("output row out of range: " + v.name);
    if (v.truth.size() != summary.mean.cols()) throw dimension_error("truth length differs from the evaluation points: " + v.name);
  }

  CalibrationResult res;
  res.calibrated = summary;
  std::vector<Eigen::VectorXd> means;
  std::map<std::string, double> alpha;
  for (const auto& v : variables) {
    VariableCalibration c;
    c.name = v.name;
    Eigen::VectorXd mu = summary.mean.row(static_cast<Eigen::Index>(v.output)).transpose();
    if (v.mean_match) {
      c.offset = (v.truth - mu).mean();
      mu.array() += c.offset;
    }
    const Eigen::VectorXd sigma = summary.std.row(static_cast<Eigen::Index>(v.output)).transpose();
    const CoverageMetrics raw = coverage_metrics(v.truth, mu, sigma);
    c.rmse = raw.rmse;
    c.max_error = raw.max_error;
    c.sigma_raw = sigma.mean();
    c.coverage_raw = raw.coverage;
    c.coverage_1sigma_raw = raw.coverage_1sigma;
    c.collapsed = raw.collapsed;
    const bool is_pressure = options.pressure_name && *options.pressure_name == v.name;
    if (options.recalibrate && !is_pressure) c.alpha = recalibration_factor(v.truth, mu, sigma);
    alpha[v.name] = c.alpha;
    means.push_back(std::move(mu));
    res.report.variables.push_back(c);
  }

  if (options.recalibrate && options.pressure_name && names.count(*options.pressure_name)) {
    const auto u = alpha.find(options.u_name), v = alpha.find(options.v_name);
    if (u == alpha.end() || v == alpha.end()) throw invalid_argument("pressure factor needs both velocity factors");
    alpha[*options.pressure_name] = pressure_alpha(u->second, v->second);
  }

  for (std::size_t i = 0; i < variables.size(); ++i) {
    const EvalVariable& v = variables[i];
    VariableCalibration& c = res.report.variables[i];
    c.alpha = alpha[v.name];
    const auto row = static_cast<Eigen::Index>(v.output);
    res.calibrated.std.row(row) = c.alpha * summary.std.row(row);
    const Eigen::VectorXd sigma_cal = res.calibrated.std.row(row).transpose();
    const CoverageMetrics cal = coverage_metrics(v.truth, means[i], sigma_cal);
    c.sigma_cal = sigma_cal.mean();
    c.coverage_cal = cal.coverage;
    c.coverage_1sigma_cal = cal.coverage_1sigma;
    c.ratio = cal.mean_ratio;
    c.max_ratio = cal.max_ratio;
  }
  return res;
}

void write_calibration_csv(const std::string& path, const CalibrationReport& report) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << "Variable,RMSE,sigma_raw,sigma_cal,C_raw,C_cal,ratio\n";
  for (const auto& v : report.variables) {
    os << v.name << ',' << format_double(v.rmse) << ',' << format_double(v.sigma_raw) << ',' << format_double(v.sigma_cal)
       << ',' << format_double(v.coverage_raw) << ',' << format_double(v.coverage_cal) << ',' << format_double(v.ratio)
       << '\n';
  }
  if (!os) throw io_error("failed writing " + path);
}

void write_calibration_json(const std::string& path, const CalibrationReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["variables"] = nlohmann::json::array();
  for (const auto& v : report.variables) {
    j["variables"].push_back({{"name", v.name},
                              {"rmse", v.rmse},
                              {"sigma_raw", v.sigma_raw},
                              {"sigma_cal", v.sigma_cal},
                              {"coverage_raw", v.coverage_raw},
                              {"coverage_cal", v.coverage_cal},
                              {"coverage_1sigma_raw", v.coverage_1sigma_raw},
                              {"coverage_1sigma_cal", v.coverage_1sigma_cal},
                              {"ratio", v.ratio},
                              {"max_ratio", v.max_ratio},
                              {"max_error", v.max_error},
                              {"alpha", v.alpha},
                              {"offset", v.offset},
                              {"collapsed", v.collapsed}});
  }
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

CalibrationReport read_calibration_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  CalibrationReport r;
  try {
    nlohmann::json j;
    is >> j;
    r.method = j.value("method", std::string());
    for (const auto& e : j.at("variables")) {
      VariableCalibration v;
      v.name = e.at("name").get<std::string>();
      v.rmse = e.at("rmse").get<double>();
      v.sigma_raw = e.at("sigma_raw").get<double>();
      v.sigma_cal = e.at("sigma_cal").get<double>();
      v.coverage_raw = e.at("coverage_raw").get<double>();
      v.coverage_cal = e.at("coverage_cal").get<double>();
      v.coverage_1sigma_raw = e.value("coverage_1sigma_raw", 0.0);
      v.coverage_1sigma_cal = e.value("coverage_1sigma_cal", 0.0);
      v.ratio = e.at("ratio").get<double>();
      v.max_ratio = e.value("max_ratio", 0.0);
      v.max_error = e.value("max_error", 0.0);
      v.alpha = e.at("alpha").get<double>();
      v.offset = e.value("offset", 0.0);
      v.collapsed = e.value("collapsed", false);
      r.variables.push_back(v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error(path + ": " + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Tempering-exponent tuning

std::optional<ExponentGroup> exponent_group(const std::string& variable) {
  if (variable == "U" || variable == "V" || variable == "u") return ExponentGroup::kData;
  if (variable == "fx" || variable == "fy") return ExponentGroup::kForce;
  if (variable == "P") return ExponentGroup::kResidual;
  return std::nullopt;
}

namespace {

double band_distance(const std::map<std::string, double>& coverage, const TuneRules& rules) {
  double d = 0.0;
  for (const auto& [name, c] : coverage) d += std::max({0.0, rules.band_low - c, c - rules.band_high});
  return d;
}

double& exponent(TemperingExponents& b, ExponentGroup g) {
  switch (g) {
    case ExponentGroup::kData: return b.beta_d;
    case ExponentGroup::kForce: return b.beta_f;
    case ExponentGroup::kResidual: return b.beta_r;
  }
  return b.beta_d;
}

}  // namespace

ExponentTuneState tune_tempering_exponents(
    const std::function<CalibrationReport(const TemperingExponents&)>& evaluate, TemperingExponents init,
    const std::map<std::string, double>& map_rmse, const TuneRules& rules) {
  if (rules.max_iterations == 0) throw invalid_argument("tuning needs at least one iteration");
  if (!(rules.beta_min > 0.0 && rules.beta_min <= rules.beta_max && rules.beta_max <= 1.0)) {
    throw invalid_argument("exponent clamp range must lie in (0, 1]");
  }
  auto clamp = [&](double b) { return std::clamp(b, rules.beta_min, rules.beta_max); };
  init.beta_d = clamp(init.beta_d);
  init.beta_f = clamp(init.beta_f);
  init.beta_r = clamp(init.beta_r);

  ExponentTuneState st;
  st.current = init;
  st.best = init;
  double best_distance = std::numeric_limits<double>::infinity();
  while (st.iterations < rules.max_iterations) {
    const CalibrationReport report = evaluate(st.current);
    ++st.iterations;
    std::map<std::string, double> coverage;
    for (const auto& v : report.variables) coverage[v.name] = v.coverage_raw;
    st.tried.push_back(st.current);
    st.coverage_history.push_back(coverage);

    const double d = band_distance(coverage, rules);
    if (d <= best_distance) {
      best_distance = d;
      st.best = st.current;
    }
    if (d == 0.0) {
      st.converged = true;
      break;
    }
    if (st.iterations == rules.max_iterations) break;

    // Per exponent: any variable over-covered or with degraded accuracy
    // raises it; otherwise any under-covered variable lowers it.
    std::map<ExponentGroup, int> direction;
    for (const auto& v : report.variables) {
      const auto g = exponent_group(v.name);
      if (!g) continue;
      const auto m = map_rmse.find(v.name);
      const bool degraded = m != map_rmse.end() && v.rmse > rules.rmse_degradation * m->second;
      const bool in_band = v.coverage_raw >= rules.band_low && v.coverage_raw <= rules.band_high;
      int& dir = direction[*g];
      if (degraded || (!in_band && v.coverage_raw > rules.overcoverage)) {
        dir = 1;
      } else if (!in_band && v.coverage_raw < rules.undercoverage && dir == 0) {
        dir = -1;
      }
    }
    TemperingExponents next = st.current;
    for (const auto& [g, dir] : direction) {
      if (dir != 0) exponent(next, g) = clamp(exponent(next, g) + dir * rules.step);
    }
    if (next == st.current) break;   // nothing left to adjust
    ++st.adjustments;
    st.current = next;
  }
  return st;
}

}  // namespace pinnuq
