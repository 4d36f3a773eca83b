#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pinnuq/cli/config.hpp"

namespace pinnuq::cli {

/// Seed streams derived from the experiment seed.
namespace stream {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kTraining = 3;
inline constexpr std::uint64_t kSubsample = 4;
inline constexpr std::uint64_t kSampler = 5;
inline constexpr std::uint64_t kDropout = 6;
inline constexpr std::uint64_t kRepulsion = 7;
}  // namespace stream

/// Raises glibc's mmap and trim thresholds so large temporaries are reused
/// from the heap.  No-op on other C libraries.  Call once at startup.
void configure_allocator();

ExperimentDataset make_dataset(const ExperimentConfig& config);
Problem make_problem(const ExperimentConfig& config);
Domain make_domain(const ExperimentConfig& config);
/// Input and output widths from the problem, inputs mapped from the domain
/// box onto [-1, 1] when normalize_inputs is set.
NetworkSpec make_network(const ExperimentConfig& config);
/// Scored variables with ground truth on the test points; pressure is
/// gauge-matched.
std::vector<EvalVariable> eval_variables(const ExperimentConfig& config, const ExperimentDataset& data);
CalibrationOptions calibration_options(const ExperimentConfig& config, const std::vector<EvalVariable>& variables);

struct RunResult {
  ExperimentConfig config;
  ExperimentDataset data;
  NetworkSpec net;
  std::vector<EvalVariable> variables;
  PredictiveSummary summary;        // raw predictive mean / std on the test points
  CalibrationResult calibration;
  std::vector<LossRecord> history;
  std::map<std::string, double> map_rmse;   // BPINN with MAP start
  std::size_t map_lbfgs_steps = 0;
  std::size_t map_lbfgs_evaluations = 0;
  std::optional<SamplerDiagnostics> diagnostics;
  std::optional<ExponentTuneState> tuning;
  std::optional<TemperingExponents> final_exponents;
  Eigen::MatrixXd samples;          // BPINN draws (S x P)
  std::vector<ParamVector> members; // trained ensemble members, or the single dropout network
  std::vector<std::string> warnings;
};

/// Runs the configured pipeline.  Artifacts are written to `output_dir` when
/// given; progress goes to `log` when given.
RunResult run_experiment(const ExperimentConfig& config, const std::optional<std::filesystem::path>& output_dir = {},
                         std::ostream* log = nullptr);

void write_artifacts(const RunResult& result, const std::filesystem::path& output_dir);

/// The config recorded in a run's manifest.json, overrides applied on top.
ExperimentConfig load_manifest_config(const std::filesystem::path& manifest,
                                      const std::vector<ConfigEntry>& overrides = {});

struct ComparisonRow {
  std::string method;
  VariableCalibration variable;
};

struct Comparison {
  std::string problem;
  std::vector<ComparisonRow> rows;
};

/// Merges the calibration reports of finished runs.  Throws a config error
/// when the runs are on different problems.
Comparison compare_runs(const std::vector<std::filesystem::path>& run_dirs);
/// Method,Variable,RMSE,sigma_raw,sigma_cal,C_raw,C_cal,ratio
void write_comparison_csv(const std::string& path, const Comparison& comparison);
std::string format_comparison(const Comparison& comparison);

}  // namespace pinnuq::cli
