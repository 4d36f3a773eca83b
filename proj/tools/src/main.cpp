#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "pinnuq/cli/config.hpp"
#include "pinnuq/cli/experiment.hpp"
#include "pinnuq/error.hpp"

namespace {

using namespace pinnuq;
using namespace pinnuq::cli;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument: return 2;
    case ErrorKind::kNumeric:
    case ErrorKind::kNonFinite:
    case ErrorKind::kDimension: return 3;
    case ErrorKind::kIo: return 4;
  }
  return 1;
}

std::string kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

int report(const Error& e) {
  nlohmann::json j{{"error", kind_name(e.kind())}, {"message", e.what()}};
  if (e.line) j["line"] = *e.line;
  if (e.layer) j["layer"] = *e.layer;
  if (e.point) j["point"] = *e.point;
  if (e.stage) j["stage"] = *e.stage;
  if (e.iteration) j["iteration"] = *e.iteration;
  std::cerr << j.dump() << std::endl;
  return exit_code(e.kind());
}

std::vector<ConfigEntry> parse_overrides(const std::vector<std::string>& sets) {
  std::vector<ConfigEntry> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::kConfig, "--set expects key=value, got '" + s + "'");
    out.push_back({s.substr(0, eq), s.substr(eq + 1), 0});
  }
  return out;
}

ExperimentConfig resolve(const std::string& config_path, const std::string& problem, const std::string& method,
                         const std::vector<std::string>& sets, const std::string& manifest = "") {
  if (!manifest.empty()) {
    if (!config_path.empty() || !problem.empty() || !method.empty()) {
      throw Error(ErrorKind::kConfig, "--manifest cannot be combined with --config, --problem or --method");
    }
    return load_manifest_config(manifest, parse_overrides(sets));
  }
  std::vector<ConfigEntry> overrides;
  if (!problem.empty()) overrides.push_back({"problem", problem, 0});
  if (!method.empty()) overrides.push_back({"method", method, 0});
  for (auto& e : parse_overrides(sets)) overrides.push_back(std::move(e));
  if (!config_path.empty()) return load_config_file(config_path, overrides);
  return build_config({}, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  pinnuq::cli::configure_allocator();
  CLI::App app{"Uncertainty quantification for physics-informed neural networks"};
  app.require_subcommand(1);

  std::string config_path, problem, method, output_dir, manifest;
  std::vector<std::string> sets;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Train / sample one method and write its artifacts");
  run->add_option("-c,--config", config_path, "Config file (key = value lines)");
  run->add_option("--problem", problem, "vdp | rans-manufactured | rans-csv");
  run->add_option("--method", method, "bpinn-hmc | bpinn-nuts | mc-dropout | rde-function | rde-parameter | vanilla-ensemble");
  run->add_option("--manifest", manifest, "Re-run the config recorded in a manifest.json");
  run->add_option("-s,--set", sets, "Override one key (key=value), repeatable");
  run->add_option("-o,--output-dir", output_dir, "Artifact directory")->required();
  run->add_flag("-q,--quiet", quiet, "No progress output");

  std::vector<std::string> run_dirs;
  std::string csv_out;
  auto* compare = app.add_subcommand("compare", "Merge the calibration tables of finished runs");
  compare->add_option("runs", run_dirs, "Run directories")->required();
  compare->add_option("--csv", csv_out, "Also write the merged table as CSV");

  auto* defaults = app.add_subcommand("show-defaults", "Print the default config of a problem/method pair");
  defaults->add_option("--problem", problem, "Problem")->required();
  defaults->add_option("--method", method, "Method")->required();

  auto* validate = app.add_subcommand("validate-config", "Check a config file without running it");
  validate->add_option("config", config_path, "Config file")->required();
  validate->add_option("-s,--set", sets, "Override one key (key=value), repeatable");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const ExperimentConfig cfg = resolve(config_path, problem, method, sets, manifest);
      run_experiment(cfg, std::filesystem::path(output_dir), quiet ? nullptr : &std::cerr);
      std::cout << (std::filesystem::path(output_dir) / "calibration.csv").string() << "\n";
    } else if (compare->parsed()) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      const Comparison cmp = compare_runs(dirs);
      std::cout << format_comparison(cmp);
      if (!csv_out.empty()) write_comparison_csv(csv_out, cmp);
    } else if (defaults->parsed()) {
      std::cout << config_to_text(default_config(parse_problem(problem), parse_method(method)));
    } else if (validate->parsed()) {
      const ExperimentConfig cfg = resolve(config_path, "", "", sets);
      std::cout << "ok: " << to_string(cfg.problem) << " / " << to_string(cfg.method) << "\n";
    }
  } catch (const Error& e) {
    return report(e);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
