#include "pinnuq/cli/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "pinnuq/error.hpp"
#include "pinnuq/rng.hpp"
#include "pinnuq/text.hpp"

#ifndef PINNUQ_VERSION
#define PINNUQ_VERSION "0.1.0"
#endif

namespace pinnuq::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class Logger {
 public:
  explicit Logger(std::ostream* os) : os_(os), t0_(std::chrono::steady_clock::now()) {}

  template <class... Args>
  void operator()(const Args&... args) const {
    if (!os_) return;
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    *os_ << "[" << std::fixed << std::setprecision(1) << std::setw(7) << t << "s] " << std::defaultfloat << std::setprecision(4);
    (*os_ << ... << args) << std::endl;
  }

 private:
  std::ostream* os_;
  std::chrono::steady_clock::time_point t0_;
};

Error config_error(const std::string& what) { return Error(ErrorKind::kConfig, what); }

std::vector<std::string> input_names(const ExperimentConfig& c) {
  return c.problem == ProblemKind::kVdp ? std::vector<std::string>{"t"} : std::vector<std::string>{"x", "y"};
}

std::string output_name(const ExperimentConfig& c, std::size_t output) {
  return c.problem == ProblemKind::kVdp ? std::string("u") : std::string(rans_field_names()[output]);
}

PointSet subsample_for(const ExperimentConfig& c, const ExperimentDataset& data, std::size_t size) {
  const auto n = static_cast<std::size_t>(data.collocation.cols());
  if (size == 0 || size >= n) return data.collocation;
  return draw_collocation_subsample(data.collocation, size, derive_seed(c.seed, stream::kSubsample));
}

std::map<std::string, double> point_rmse(const NetworkSpec& net, const ParamVector& params,
                                         const ExperimentDataset& data, const std::vector<EvalVariable>& vars) {
  const Eigen::MatrixXd pred = forward(net, params, data.test_points);
  std::map<std::string, double> out;
  for (const auto& v : vars) {
    Eigen::VectorXd mu = pred.row(static_cast<Eigen::Index>(v.output)).transpose();
    if (v.mean_match) mu.array() += (v.truth - mu).mean();
    out[v.name] = std::sqrt((v.truth - mu).squaredNorm() / static_cast<double>(v.truth.size()));
  }
  return out;
}

struct SamplerRun {
  PosteriorSamples samples;
  PredictiveSummary summary;
  CalibrationResult calibration;
};

SamplerRun run_sampler(const ExperimentConfig& c, const ExperimentDataset& data, const NetworkSpec& net,
                       const Problem& problem, const ParamVector& init, const TemperedPosteriorSpec& spec,
                       const std::vector<EvalVariable>& vars, const Logger& log) {
  const std::size_t sub = c.method == MethodKind::kBpinnHmc ? c.hmc_subsample : c.nuts_subsample;
  const PointSet points = subsample_for(c, data, sub);
  const auto target = tempered_posterior_target(net, data.observations, points,
                                                static_cast<std::size_t>(data.collocation.cols()), spec, problem);
  SamplerRun run;
  const std::uint64_t seed = derive_seed(c.seed, stream::kSampler);
  if (c.method == MethodKind::kBpinnHmc) {
    log("HMC: ", c.hmc.burn_in, " burn-in + ", c.hmc.n_samples, " draws, L = ", c.hmc.n_leapfrog);
    run.samples = hmc_sample(target, init, c.hmc, seed);
  } else {
    log("NUTS: ", c.nuts.warmup, " warmup + ", c.nuts.n_samples, " draws, depth <= ", c.nuts.max_tree_depth,
        ", ", points.cols(), " collocation points per evaluation");
    run.samples = nuts_sample(target, init, c.nuts, seed);
  }
  const auto& d = run.samples.diagnostics;
  log("sampler done: step ", d.step_size, ", acceptance ", d.acceptance_rate, ", divergences ", d.divergences);
  run.summary = predict_from_samples(net, run.samples.samples, data.test_points);
  run.calibration = calibrate(run.summary, vars, calibration_options(c, vars));
  return run;
}

TemperedPosteriorSpec with_exponents(TemperedPosteriorSpec spec, const TemperingExponents& e) {
  spec.beta_d = e.beta_d;
  spec.beta_f = e.beta_f;
  spec.beta_r = e.beta_r;
  return spec;
}

void run_bpinn(RunResult& r, const Problem& problem, const Logger& log) {
  const ExperimentConfig& c = r.config;
  ParamVector init = init_params(r.net, derive_seed(c.seed, stream::kInit));
  if (c.init == "map") {
    log("MAP pretraining: ", c.map.stage_a_iters, " / ", c.map.stage_b_iters, " / ", c.map.stage_c_iters);
    MapResult m = run_map_pretraining(r.net, init, r.data.observations, r.data.collocation, c.posterior, problem,
                                      c.map, derive_seed(c.seed, stream::kTraining));
    if (m.lbfgs_line_search_failed) r.warnings.push_back("L-BFGS line search failed during MAP pretraining");
    r.map_lbfgs_steps = m.lbfgs_iterations;
    r.map_lbfgs_evaluations = m.lbfgs_evaluations;
    log("L-BFGS: ", m.lbfgs_iterations, " steps, ", m.lbfgs_evaluations, " evaluations");
    init = std::move(m.params);
    r.history = std::move(m.history);
    r.map_rmse = point_rmse(r.net, init, r.data, r.variables);
    r.members.push_back(init);
    for (const auto& [k, v] : r.map_rmse) log("MAP RMSE ", k, " = ", v);
  }

  SamplerRun run;
  if (c.tune) {
    std::vector<std::pair<TemperingExponents, SamplerRun>> runs;
    const auto evaluate = [&](const TemperingExponents& e) {
      log("tempering exponents beta_d = ", e.beta_d, ", beta_f = ", e.beta_f, ", beta_r = ", e.beta_r);
      runs.emplace_back(e, run_sampler(c, r.data, r.net, problem, init, with_exponents(c.posterior, e), r.variables, log));
      return runs.back().second.calibration.report;
    };
    const TemperingExponents start{c.posterior.beta_d, c.posterior.beta_f, c.posterior.beta_r};
    r.tuning = tune_tempering_exponents(evaluate, start, r.map_rmse, c.tune_rules);
    if (!r.tuning->converged) r.warnings.push_back("tempering-exponent tuning stopped at the iteration cap");
    for (auto it = runs.rbegin(); it != runs.rend(); ++it) {
      if (it->first == r.tuning->best) {
        run = std::move(it->second);
        break;
      }
    }
    r.final_exponents = r.tuning->best;
  } else {
    run = run_sampler(c, r.data, r.net, problem, init, c.posterior, r.variables, log);
    r.final_exponents = TemperingExponents{c.posterior.beta_d, c.posterior.beta_f, c.posterior.beta_r};
  }
  if (run.samples.diagnostics.divergence_warning) r.warnings.push_back("more than a quarter of the draws diverged");
  r.diagnostics = run.samples.diagnostics;
  r.samples = std::move(run.samples.samples);
  r.summary = std::move(run.summary);
  r.calibration = std::move(run.calibration);
}

void run_dropout(RunResult& r, const Problem& problem, const Logger& log) {
  const ExperimentConfig& c = r.config;
  log("MC-dropout training: ", c.train.epochs, " epochs, rate ", c.dropout_rate);
  PinnTrainResult t = train_mc_dropout(r.net, init_params(r.net, derive_seed(c.seed, stream::kInit)),
                                       r.data.observations, r.data.collocation, problem, c.train,
                                       derive_seed(c.seed, stream::kTraining));
  r.history = std::move(t.history);
  r.summary = mc_dropout_predict(r.net, t.params, r.data.test_points, c.dropout_samples,
                                 derive_seed(c.seed, stream::kDropout));
  r.members.push_back(std::move(t.params));
}

void run_ensemble(RunResult& r, const Problem& problem, const Logger& log) {
  const ExperimentConfig& c = r.config;
  EnsembleConfig ec;
  ec.train = c.train;
  ec.members = c.members;
  ec.variant = c.method == MethodKind::kRdeParameter ? RepulsionVariant::kParameterSpace : RepulsionVariant::kFunctionSpace;
  ec.lambda_rep = c.method == MethodKind::kVanillaEnsemble ? 0.0 : c.lambda_rep;
  ec.bandwidth = c.bandwidth;
  ec.bandwidth_warmup_fraction = c.bandwidth_warmup_fraction;
  if (ec.variant == RepulsionVariant::kFunctionSpace && ec.lambda_rep > 0.0) {
    ec.repulsion_points = sample_collocation(make_domain(c), c.n_rep, derive_seed(c.seed, stream::kRepulsion));
  }
  log("ensemble training: ", c.members, " members x ", c.train.epochs, " epochs, lambda_rep ", ec.lambda_rep);
  EnsembleResult e = train_repulsive_ensemble(r.net, r.data.observations, r.data.collocation, problem, ec,
                                              derive_seed(c.seed, stream::kInit));
  for (std::size_t m : e.restarts) r.warnings.push_back("member " + std::to_string(m) + " restarted after divergence");
  r.history = std::move(e.history);
  r.summary = predict_from_ensemble(r.net, e.members, r.data.test_points);
  r.members = std::move(e.members);
}

json diagnostics_json(const SamplerDiagnostics& d) {
  return {{"sampler", d.sampler},
          {"acceptance_rate", d.acceptance_rate},
          {"warmup_acceptance_rate", d.warmup_acceptance_rate},
          {"step_size", d.step_size},
          {"divergences", d.divergences},
          {"warmup_divergences", d.warmup_divergences},
          {"divergence_warning", d.divergence_warning}};
}

json exponents_json(const TemperingExponents& e) {
  return {{"beta_d", e.beta_d}, {"beta_f", e.beta_f}, {"beta_r", e.beta_r}};
}

std::string compiler_id() {
#if defined(__clang__)
  return "clang " __clang_version__;
#elif defined(__GNUC__)
  return "gcc " __VERSION__;
#else
  return "unknown";
#endif
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw io_error("failed writing " + path.string());
}

void write_point_columns(std::ostream& os, const PointSet& points, Eigen::Index j) {
  for (Eigen::Index i = 0; i < points.rows(); ++i) os << ',' << format_double(points(i, j));
}

}  // namespace

Domain make_domain(const ExperimentConfig& c) {
  return c.problem == ProblemKind::kVdp ? Domain::interval(0.0, c.vdp.t_end) : c.rans.domain;
}

Problem make_problem(const ExperimentConfig& c) {
  if (c.problem == ProblemKind::kVdp) return VdpProblem{c.vdp.params, c.vdp_residual_scale};
  return RansProblem{c.reynolds};
}

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
#endif
}

ExperimentDataset make_dataset(const ExperimentConfig& c) {
  const std::uint64_t seed = derive_seed(c.seed, stream::kData);
  switch (c.problem) {
    case ProblemKind::kVdp: return make_vdp_dataset(c.vdp, seed);
    case ProblemKind::kRansManufactured: return make_rans_dataset(ManufacturedRans::wake_like(c.reynolds), c.rans, seed);
    case ProblemKind::kRansCsv: return make_rans_dataset(load_grid_csv(c.grid_csv), c.rans, seed);
  }
  throw config_error("unknown problem");
}

NetworkSpec make_network(const ExperimentConfig& c) {
  const std::size_t in = c.problem == ProblemKind::kVdp ? 1 : 2;
  const std::size_t out = c.problem == ProblemKind::kVdp ? 1 : rans::kOutputs;
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), c.hidden.begin(), c.hidden.end());
  widths.push_back(out);
  NetworkSpec net(widths, c.method == MethodKind::kMcDropout ? c.dropout_rate : 0.0);
  net.init_gain = c.init_gain;
  net.normalization = InputNormalization::identity(in);
  if (c.normalize_inputs) {
    const Domain d = make_domain(c);
    for (std::size_t i = 0; i < in; ++i) {
      net.normalization.shift[i] = 0.5 * (d.lower[i] + d.upper[i]);
      net.normalization.scale[i] = 0.5 * (d.upper[i] - d.lower[i]);
    }
  }
  net.validate();
  return net;
}

std::vector<EvalVariable> eval_variables(const ExperimentConfig& c, const ExperimentDataset& data) {
  std::vector<EvalVariable> vars;
  for (std::size_t out : data.truth_outputs) {
    EvalVariable v;
    v.name = output_name(c, out);
    v.output = out;
    v.truth = data.test_truth.row(static_cast<Eigen::Index>(out)).transpose();
    v.mean_match = is_rans(c.problem) && out == rans::kP;
    vars.push_back(std::move(v));
  }
  return vars;
}

CalibrationOptions calibration_options(const ExperimentConfig& c, const std::vector<EvalVariable>& variables) {
  CalibrationOptions o;
  o.recalibrate = c.recalibrate;
  auto has = [&](const std::string& n) {
    return std::any_of(variables.begin(), variables.end(), [&](const EvalVariable& v) { return v.name == n; });
  };
  if (is_rans(c.problem) && has("P") && has("U") && has("V")) o.pressure_name = "P";
  return o;
}

RunResult run_experiment(const ExperimentConfig& config, const std::optional<fs::path>& output_dir, std::ostream* log_stream) {
  validate_config(config);
  const Logger log(log_stream);
  RunResult r;
  r.config = config;
  log("problem ", to_string(config.problem), ", method ", to_string(config.method), ", seed ", config.seed);
  r.data = make_dataset(config);
  r.net = make_network(config);
  r.variables = eval_variables(config, r.data);
  if (r.variables.empty()) throw invalid_argument("no ground-truth fields to score on the test points");
  const Problem problem = make_problem(config);
  r.data.observations.validate(problem);
  log(r.data.observations.size(), " observations, ", r.data.collocation.cols(), " collocation points, ",
      r.data.test_points.cols(), " test points, ", r.net.param_count(), " parameters");

  if (is_bpinn(config.method)) {
    run_bpinn(r, problem, log);
  } else {
    if (config.method == MethodKind::kMcDropout) {
      run_dropout(r, problem, log);
    } else {
      run_ensemble(r, problem, log);
    }
    r.calibration = calibrate(r.summary, r.variables, calibration_options(config, r.variables));
  }
  r.calibration.report.method = to_string(config.method);
  for (const auto& w : r.summary.warnings) r.warnings.push_back(w);
  for (const auto& v : r.calibration.report.variables) {
    if (v.collapsed) r.warnings.push_back("predictive std of " + v.name + " collapsed to the floor");
    log(v.name, ": RMSE ", v.rmse, ", C_raw ", v.coverage_raw, "%, C_cal ", v.coverage_cal, "%, alpha ", v.alpha);
  }
  for (const auto& w : r.warnings) log("warning: ", w);
  if (output_dir) {
    write_artifacts(r, *output_dir);
    log("artifacts written to ", output_dir->string());
  }
  return r;
}

void write_artifacts(const RunResult& r, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
  const ExperimentConfig& c = r.config;

  write_text(dir / "config.txt", config_to_text(c));

  json m;
  m["pinnuq_version"] = PINNUQ_VERSION;
  m["compiler"] = compiler_id();
  m["problem"] = to_string(c.problem);
  m["method"] = to_string(c.method);
  m["seed"] = c.seed;
  m["config"] = config_to_map(c);
  json seeds;
  for (const auto& [name, s] : std::vector<std::pair<std::string, std::uint64_t>>{
           {"data", stream::kData}, {"init", stream::kInit}, {"training", stream::kTraining},
           {"subsample", stream::kSubsample}, {"sampler", stream::kSampler}, {"dropout", stream::kDropout},
           {"repulsion", stream::kRepulsion}}) {
    seeds[name] = derive_seed(c.seed, s);
  }
  m["seeds"] = seeds;
  m["network"] = json::parse(spec_to_json(r.net));
  m["counts"] = {{"observations", r.data.observations.size()},
                 {"collocation", r.data.collocation.cols()},
                 {"test_points", r.data.test_points.cols()},
                 {"parameters", r.net.param_count()}};
  if (!r.map_rmse.empty()) {
    m["map_rmse"] = r.map_rmse;
    m["map_lbfgs"] = {{"steps", r.map_lbfgs_steps}, {"evaluations", r.map_lbfgs_evaluations}};
  }
  if (r.diagnostics) m["diagnostics"] = diagnostics_json(*r.diagnostics);
  if (r.final_exponents) m["tempering_exponents"] = exponents_json(*r.final_exponents);
  if (r.tuning) {
    json t;
    t["converged"] = r.tuning->converged;
    t["iterations"] = r.tuning->iterations;
    t["adjustments"] = r.tuning->adjustments;
    t["tried"] = json::array();
    for (std::size_t i = 0; i < r.tuning->tried.size(); ++i) {
      json e = exponents_json(r.tuning->tried[i]);
      if (i < r.tuning->coverage_history.size()) e["coverage_raw"] = r.tuning->coverage_history[i];
      t["tried"].push_back(e);
    }
    m["tuning"] = t;
  }
  m["warnings"] = r.warnings;
  write_text(dir / "manifest.json", m.dump(2) + "\n");

  if (is_bpinn(c.method)) {
    if (!r.members.empty()) save_params(dir / "map.params", r.net, r.members.front());
    PosteriorSamples s;
    s.samples = r.samples;
    if (r.diagnostics) s.diagnostics = *r.diagnostics;
    save_samples((dir / "samples.bin").string(), s);
  } else if (c.method == MethodKind::kMcDropout) {
    save_params(dir / "params", r.net, r.members.front());
  } else {
    for (std::size_t k = 0; k < r.members.size(); ++k) {
      save_params(dir / ("member_" + std::to_string(k) + ".params"), r.net, r.members[k]);
    }
  }

  const auto inputs = input_names(c);
  std::string header = "point";
  for (const auto& n : inputs) header += "," + n;
  {
    std::ofstream os(dir / "predictive_summary.csv");
    if (!os) throw io_error("cannot open predictive_summary.csv for writing");
    os << header << ",variable,mean,std_raw,std_cal\n";
    for (Eigen::Index j = 0; j < r.data.test_points.cols(); ++j) {
      for (Eigen::Index k = 0; k < r.summary.mean.rows(); ++k) {
        os << j;
        write_point_columns(os, r.data.test_points, j);
        os << ',' << output_name(c, static_cast<std::size_t>(k)) << ',' << format_double(r.summary.mean(k, j)) << ','
           << format_double(r.summary.std(k, j)) << ',' << format_double(r.calibration.calibrated.std(k, j)) << '\n';
      }
    }
    if (!os) throw io_error("failed writing predictive_summary.csv");
  }
  {
    std::ofstream os(dir / "plot_data.csv");
    if (!os) throw io_error("cannot open plot_data.csv for writing");
    os << header << ",variable,truth,mean,sigma_raw,sigma_cal,abs_error\n";
    for (std::size_t i = 0; i < r.variables.size(); ++i) {
      const EvalVariable& v = r.variables[i];
      const double offset = r.calibration.report.variables[i].offset;
      const auto k = static_cast<Eigen::Index>(v.output);
      for (Eigen::Index j = 0; j < r.data.test_points.cols(); ++j) {
        const double mu = r.summary.mean(k, j) + offset;
        os << j;
        write_point_columns(os, r.data.test_points, j);
        os << ',' << v.name << ',' << format_double(v.truth(j)) << ',' << format_double(mu) << ','
           << format_double(r.summary.std(k, j)) << ',' << format_double(r.calibration.calibrated.std(k, j)) << ','
           << format_double(std::abs(v.truth(j) - mu)) << '\n';
      }
    }
    if (!os) throw io_error("failed writing plot_data.csv");
  }

  write_calibration_csv((dir / "calibration.csv").string(), r.calibration.report);
  write_calibration_json((dir / "calibration.json").string(), r.calibration.report);
  if (!r.history.empty()) save_loss_history((dir / "loss_history.csv").string(), r.history);

  std::map<std::string, double> sigma;
  for (const auto& comp : r.data.observations.components) sigma[comp.name] = r.data.noise_sigma;
  save_observations_csv((dir / "observations.csv").string(), r.data.observations, sigma);
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw io_error("malformed " + path.string() + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig load_manifest_config(const fs::path& manifest, const std::vector<ConfigEntry>& overrides) {
  const json m = read_json(manifest);
  if (!m.contains("config") || !m["config"].is_object()) throw io_error(manifest.string() + " has no config object");
  std::vector<ConfigEntry> entries;
  for (const auto& [k, v] : m["config"].items()) {
    if (!v.is_string()) throw io_error(manifest.string() + ": config value of " + k + " is not a string");
    entries.push_back({k, v.get<std::string>(), 0});
  }
  return build_config(entries, overrides);
}

Comparison compare_runs(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw invalid_argument("compare needs at least one run directory");
  Comparison out;
  for (const auto& dir : run_dirs) {
    const fs::path manifest_path = dir / "manifest.json";
    const json m = read_json(manifest_path);
    if (!m.contains("problem") || !m["problem"].is_string()) throw io_error(manifest_path.string() + " has no problem");
    const std::string problem = m["problem"];
    if (out.problem.empty()) {
      out.problem = problem;
    } else if (problem != out.problem) {
      throw config_error("cannot compare runs on different problems: " + out.problem + " and " + problem + " (" +
                         dir.string() + ")");
    }
    const CalibrationReport report = read_calibration_json((dir / "calibration.json").string());
    for (const auto& v : report.variables) out.rows.push_back({report.method, v});
  }
  return out;
}

void write_comparison_csv(const std::string& path, const Comparison& cmp) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << "Method,Variable,RMSE,sigma_raw,sigma_cal,C_raw,C_cal,ratio\n";
  for (const auto& row : cmp.rows) {
    const auto& v = row.variable;
    os << row.method << ',' << v.name << ',' << format_double(v.rmse) << ',' << format_double(v.sigma_raw) << ','
       << format_double(v.sigma_cal) << ',' << format_double(v.coverage_raw) << ',' << format_double(v.coverage_cal)
       << ',' << format_double(v.ratio) << '\n';
  }
  if (!os) throw io_error("failed writing " + path);
}

std::string format_comparison(const Comparison& cmp) {
  std::ostringstream os;
  os << "problem: " << cmp.problem << "\n";
  os << std::left << std::setw(18) << "Method" << std::setw(10) << "Variable" << std::right << std::setw(11) << "RMSE"
     << std::setw(11) << "sigma_raw" << std::setw(11) << "sigma_cal" << std::setw(8) << "C_raw" << std::setw(8)
     << "C_cal" << std::setw(8) << "ratio" << "\n";
  for (const auto& row : cmp.rows) {
    const auto& v = row.variable;
    os << std::left << std::setw(18) << row.method << std::setw(10) << v.name << std::right << std::scientific
       << std::setprecision(3) << std::setw(11) << v.rmse << std::setw(11) << v.sigma_raw << std::setw(11)
       << v.sigma_cal << std::fixed << std::setprecision(1) << std::setw(8) << v.coverage_raw << std::setw(8)
       << v.coverage_cal << std::setprecision(3) << std::setw(8) << v.ratio << "\n";
  }
  return os.str();
}

}  // namespace pinnuq::cli
