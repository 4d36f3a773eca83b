#pragma once
// Experiment configuration: one `key = value` per line, `#` starts a comment.
// Unknown keys, and keys that do not apply to the chosen problem/method,
// are rejected.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pinnuq/data.hpp"
#include "pinnuq/posterior.hpp"
#include "pinnuq/samplers.hpp"
#include "pinnuq/trainers.hpp"
#include "pinnuq/uq.hpp"

namespace pinnuq::cli {

enum class ProblemKind { kVdp, kRansManufactured, kRansCsv };
enum class MethodKind { kBpinnHmc, kBpinnNuts, kMcDropout, kRdeFunction, kRdeParameter, kVanillaEnsemble };

std::string to_string(ProblemKind p);
std::string to_string(MethodKind m);
ProblemKind parse_problem(const std::string& s);
MethodKind parse_method(const std::string& s);

bool is_bpinn(MethodKind m);
bool is_ensemble(MethodKind m);
bool is_rans(ProblemKind p);

struct ExperimentConfig {
  ProblemKind problem = ProblemKind::kVdp;
  MethodKind method = MethodKind::kBpinnHmc;
  std::uint64_t seed = 1234;

  // data
  VdpDataConfig vdp;
  double vdp_residual_scale = 1e-4;
  RansDataConfig rans;
  double reynolds = 3900.0;
  std::string grid_csv;

  // network
  std::vector<std::size_t> hidden;
  bool normalize_inputs = true;
  double init_gain = 1.0;
  double dropout_rate = 0.0;

  // Bayesian PINN
  TemperedPosteriorSpec posterior;
  std::string init = "map";   // map | random
  StagePlan map;
  HmcConfig hmc;
  std::size_t hmc_subsample = 0;   // 0: all collocation points
  NutsConfig nuts;
  std::size_t nuts_subsample = 1000;
  bool tune = false;
  TuneRules tune_rules;

  // PINN-loss training
  PinnTrainConfig train;
  std::size_t dropout_samples = 1000;
  std::size_t members = 10;
  double lambda_rep = 1.0;
  std::optional<double> bandwidth;
  double bandwidth_warmup_fraction = 0.1;
  std::size_t n_rep = 64;

  bool recalibrate = true;

  std::size_t n_collocation() const;
  double noise_sigma() const;
};

/// Reference defaults for the pair.
ExperimentConfig default_config(ProblemKind problem, MethodKind method);

/// Keys that apply to this problem/method, in print order.
std::vector<std::string> config_keys(const ExperimentConfig& config);
std::string get_value(const ExperimentConfig& config, const std::string& key);
/// Throws a config error on unknown / inapplicable keys or bad values.
void set_value(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Parsed `key = value` lines (line numbers kept for messages).
struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};
std::vector<ConfigEntry> parse_config_text(const std::string& text);

/// problem and method come from the entries or the overrides (the latter
/// win); all other keys are applied on top of default_config.
ExperimentConfig build_config(const std::vector<ConfigEntry>& entries, const std::vector<ConfigEntry>& overrides = {});
ExperimentConfig load_config_file(const std::string& path, const std::vector<ConfigEntry>& overrides = {});

/// Throws a config error naming the offending setting.
void validate_config(const ExperimentConfig& config);

/// Every applicable key with its value, one per line.
std::string config_to_text(const ExperimentConfig& config);
std::map<std::string, std::string> config_to_map(const ExperimentConfig& config);
ExperimentConfig config_from_map(const std::map<std::string, std::string>& values);

}  // namespace pinnuq::cli
