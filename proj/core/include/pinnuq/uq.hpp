#pragma once
// Predictive statistics, recalibration and calibration metrics.
//
// Coverages are percentages.  Predictions are (outputs x points) matrices as
// returned by forward().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pinnuq/network.hpp"

namespace pinnuq {

inline constexpr double kSigmaFloor = 1e-12;

struct PredictiveSummary {
  Eigen::MatrixXd mean;   // outputs x points
  Eigen::MatrixXd std;    // population standard deviation across samples
  std::size_t samples = 0;
  std::vector<std::string> warnings;
};

/// Streaming mean / population variance (Welford) over prediction matrices.
class PredictiveAccumulator {
 public:
  void add(const Eigen::MatrixXd& prediction);
  std::size_t count() const { return n_; }
  /// Throws when fewer than two predictions were added.
  PredictiveSummary summary() const;

 private:
  std::size_t n_ = 0;
  Eigen::MatrixXd mean_;
  Eigen::MatrixXd m2_;
};

PredictiveSummary predictive_stats(const std::vector<Eigen::MatrixXd>& predictions);

/// Network predictions for every row of `samples` (S x P).
PredictiveSummary predict_from_samples(const NetworkSpec& net, const Eigen::MatrixXd& samples, const PointSet& points);
PredictiveSummary predict_from_ensemble(const NetworkSpec& net, const std::vector<ParamVector>& members,
                                        const PointSet& points);

/// S stochastic forward passes with fresh dropout masks.  A zero dropout rate
/// gives std 0 and a warning.
PredictiveSummary mc_dropout_predict(const NetworkSpec& net, ParamView params, const PointSet& points,
                                     std::size_t n_samples = 1000, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Recalibration

/// Linear interpolation between order statistics, q in [0, 1].
double empirical_quantile(std::vector<double> values, double q);

/// sigma with entries below `floor` raised to it; `collapsed` reports whether
/// any entry was raised.
Eigen::VectorXd floor_sigma(const Eigen::VectorXd& sigma, bool* collapsed = nullptr, double floor = kSigmaFloor);

/// alpha = P95(|truth - mean| / sigma) / 2, sigma floored first.  Throws when
/// alpha is zero or not finite.
double recalibration_factor(const Eigen::VectorXd& truth, const Eigen::VectorXd& mean, const Eigen::VectorXd& sigma);

/// Output rows whose factor is derived instead of estimated: pressure takes
/// the average of the two velocity factors.
struct PressureRule {
  std::size_t pressure = 2;
  std::size_t u = 0;
  std::size_t v = 1;
};

inline double pressure_alpha(double alpha_u, double alpha_v) { return 0.5 * (alpha_u + alpha_v); }

/// std row k scaled by alpha[k]; the pressure row (when a rule is given) uses
/// pressure_alpha.  Means are unchanged.  Throws when an output has no factor.
PredictiveSummary apply_recalibration(const PredictiveSummary& summary, const std::map<std::size_t, double>& alpha,
                                      const std::optional<PressureRule>& pressure = std::nullopt);

struct CoverageMetrics {
  double coverage = 0.0;     // % of points with |e| < 2 sigma
  double coverage_1sigma = 0.0;
  double mean_ratio = 0.0;   // mean |e| / sigma
  double max_ratio = 0.0;
  double rmse = 0.0;
  double max_error = 0.0;
  bool collapsed = false;    // some sigma was floored
};

CoverageMetrics coverage_metrics(const Eigen::VectorXd& truth, const Eigen::VectorXd& mean, const Eigen::VectorXd& sigma);

// ---------------------------------------------------------------------------
// Calibration report

struct VariableCalibration {
  std::string name;
  double rmse = 0.0;
  double sigma_raw = 0.0;     // mean over evaluation points
  double sigma_cal = 0.0;
  double coverage_raw = 0.0;
  double coverage_cal = 0.0;
  double coverage_1sigma_raw = 0.0;
  double coverage_1sigma_cal = 0.0;
  double ratio = 0.0;         // mean |e| / sigma_cal
  double max_ratio = 0.0;     // max |e| / sigma_cal
  double max_error = 0.0;
  double alpha = 1.0;
  double offset = 0.0;        // gauge constant removed before scoring
  bool collapsed = false;
};

struct CalibrationReport {
  std::string method;
  std::vector<VariableCalibration> variables;

  const VariableCalibration* find(const std::string& name) const;
};

/// One scored variable: network output row and ground truth at the
/// evaluation points.
struct EvalVariable {
  std::string name;
  std::size_t output = 0;
  Eigen::VectorXd truth;
  /// Remove mean(truth - prediction) before scoring (pressure gauge).
  bool mean_match = false;
};

struct CalibrationOptions {
  bool recalibrate = true;
  /// Name of the variable scaled by the average of the two velocity factors.
  std::optional<std::string> pressure_name;
  std::string u_name = "U";
  std::string v_name = "V";
};

struct CalibrationResult {
  CalibrationReport report;
  PredictiveSummary calibrated;   // std rows of scored outputs scaled by alpha
};

/// Scores every variable raw, estimates alpha (unless disabled), rescales and
/// scores again.  Alpha is estimated on the same evaluation set it is applied to.
CalibrationResult calibrate(const PredictiveSummary& summary, const std::vector<EvalVariable>& variables,
                            const CalibrationOptions& options);

/// Variable,RMSE,sigma_raw,sigma_cal,C_raw,C_cal,ratio
void write_calibration_csv(const std::string& path, const CalibrationReport& report);
void write_calibration_json(const std::string& path, const CalibrationReport& report);
CalibrationReport read_calibration_json(const std::string& path);

// ---------------------------------------------------------------------------
// Tempering-exponent tuning

struct TemperingExponents {
  double beta_d = 0.70;
  double beta_f = 0.60;
  double beta_r = 0.50;

  bool operator==(const TemperingExponents&) const = default;
};

struct TuneRules {
  double undercoverage = 90.0;   // below: decrease beta
  double overcoverage = 98.0;    // above: increase beta
  double band_low = 70.0;        // stop when every raw coverage is inside
  double band_high = 85.0;
  double step = 0.05;
  double rmse_degradation = 1.2; // posterior-mean RMSE above this multiple of MAP: increase beta
  double beta_min = 0.05;
  double beta_max = 1.0;
  std::size_t max_iterations = 10;
};

/// Which exponent a variable steers: velocity (U, V, u) the data exponent,
/// Reynolds force (fx, fy) the force exponent, pressure (P) the residual one.
enum class ExponentGroup { kData, kForce, kResidual };
std::optional<ExponentGroup> exponent_group(const std::string& variable);

struct ExponentTuneState {
  TemperingExponents current;
  std::vector<TemperingExponents> tried;
  std::vector<std::map<std::string, double>> coverage_history;   // raw coverage per variable
  std::size_t iterations = 0;     // sampler runs
  std::size_t adjustments = 0;    // exponent changes
  bool converged = false;
  TemperingExponents best;        // closest to the band over all runs
};

/// Runs `evaluate` (one sampler run + calibration report) per setting.  Each
/// evaluation is one iteration; the loop stops in band or at the cap.
ExponentTuneState tune_tempering_exponents(
    const std::function<CalibrationReport(const TemperingExponents&)>& evaluate, TemperingExponents init,
    const std::map<std::string, double>& map_rmse, const TuneRules& rules = {});

}  // namespace pinnuq
