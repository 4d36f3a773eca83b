#include "pinnuq/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "pinnuq/error.hpp"
#include "pinnuq/text.hpp"

namespace pinnuq::cli {

namespace {

Error config_error(const std::string& what, std::optional<std::size_t> line = std::nullopt) {
  Error e(ErrorKind::kConfig, line ? what + " (line " + std::to_string(*line) + ")" : what);
  e.line = line;
  return e;
}

}  // namespace

std::string to_string(ProblemKind p) {
  switch (p) {
    case ProblemKind::kVdp: return "vdp";
    case ProblemKind::kRansManufactured: return "rans-manufactured";
    case ProblemKind::kRansCsv: return "rans-csv";
  }
  return "?";
}

std::string to_string(MethodKind m) {
  switch (m) {
    case MethodKind::kBpinnHmc: return "bpinn-hmc";
    case MethodKind::kBpinnNuts: return "bpinn-nuts";
    case MethodKind::kMcDropout: return "mc-dropout";
    case MethodKind::kRdeFunction: return "rde-function";
    case MethodKind::kRdeParameter: return "rde-parameter";
    case MethodKind::kVanillaEnsemble: return "vanilla-ensemble";
  }
  return "?";
}

ProblemKind parse_problem(const std::string& s) {
  for (auto p : {ProblemKind::kVdp, ProblemKind::kRansManufactured, ProblemKind::kRansCsv}) {
    if (s == to_string(p)) return p;
  }
  throw config_error("unknown problem '" + s + "' (vdp, rans-manufactured, rans-csv)");
}

MethodKind parse_method(const std::string& s) {
  for (auto m : {MethodKind::kBpinnHmc, MethodKind::kBpinnNuts, MethodKind::kMcDropout, MethodKind::kRdeFunction,
                 MethodKind::kRdeParameter, MethodKind::kVanillaEnsemble}) {
    if (s == to_string(m)) return m;
  }
  throw config_error("unknown method '" + s +
                     "' (bpinn-hmc, bpinn-nuts, mc-dropout, rde-function, rde-parameter, vanilla-ensemble)");
}

bool is_bpinn(MethodKind m) { return m == MethodKind::kBpinnHmc || m == MethodKind::kBpinnNuts; }
bool is_ensemble(MethodKind m) {
  return m == MethodKind::kRdeFunction || m == MethodKind::kRdeParameter || m == MethodKind::kVanillaEnsemble;
}
bool is_rans(ProblemKind p) { return p != ProblemKind::kVdp; }

std::size_t ExperimentConfig::n_collocation() const {
  return problem == ProblemKind::kVdp ? vdp.n_collocation : rans.n_collocation;
}

double ExperimentConfig::noise_sigma() const {
  return problem == ProblemKind::kVdp ? vdp.noise_sigma : rans.noise_sigma;
}

ExperimentConfig default_config(ProblemKind problem, MethodKind method) {
  ExperimentConfig c;
  c.problem = problem;
  c.method = method;
  const bool vdp = problem == ProblemKind::kVdp;

  if (is_bpinn(method)) {
    if (vdp) {
      c.hidden = {50, 50};
      c.posterior = TemperedPosteriorSpec::untempered(1.0, 0.05, 0.05);
      c.vdp.n_collocation = 120;
      c.nuts_subsample = 0;
    } else {
      c.hidden = {64, 64, 64, 64, 64};
      c.rans.n_collocation = 2000;
    }
    c.hmc.adapt_step_size = true;
  } else if (method == MethodKind::kMcDropout) {
    if (vdp) {
      c.hidden = {48, 48, 48, 48};
      c.vdp.n_collocation = 120;
      c.train.epochs = 200000;
      c.train.lr = 1e-4;
      c.train.cosine_decay = false;
      c.train.ramp_fraction = 0.0;
    } else {
      c.hidden = {64, 64, 64, 64, 64};
      c.train.epochs = 100000;
      c.train.lr = 1e-3;
      c.train.cosine_decay = true;
      c.train.ramp_fraction = 0.5;
    }
    c.train.weight_decay = 0.01;
    c.dropout_rate = 0.001;
  } else {
    if (vdp) {
      c.hidden = {32, 32, 32, 32, 32};
      c.vdp.n_collocation = 200;
      c.n_rep = 64;
      c.train.epochs = 300000;
      c.train.lr = 1e-4;
    } else {
      c.hidden = {64, 64, 64, 64, 64};
      c.rans.n_collocation = 2000;
      c.n_rep = 200;
      c.train.epochs = 100000;
      c.train.lr = 1e-3;
    }
    c.train.weight_decay = 0.01;
    c.train.cosine_decay = true;
    c.train.ramp_fraction = 0.5;
    c.lambda_rep = method == MethodKind::kVanillaEnsemble ? 0.0 : method == MethodKind::kRdeFunction ? 0.01 : 1.0;
    c.recalibrate = false;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Value codecs

namespace {

void parse_into(const std::string& v, double& out) {
  try {
    out = parse_double(v, 0);
  } catch (const Error&) {
    throw config_error("expected a number, got '" + v + "'");
  }
  if (!std::isfinite(out)) throw config_error("expected a finite number, got '" + v + "'");
}

template <class Int>
void parse_int(const std::string& v, Int& out) {
  const std::string_view s = trim(v);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw config_error("expected a non-negative integer, got '" + v + "'");
  }
}

template <std::unsigned_integral Int>
void parse_into(const std::string& v, Int& out) {
  parse_int(v, out);
}

void parse_into(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
  } else if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
  } else {
    throw config_error("expected true or false, got '" + v + "'");
  }
}

void parse_into(const std::string& v, std::string& out) { out = v; }

void parse_into(const std::string& v, std::vector<std::size_t>& out) {
  out.clear();
  for (const auto f : split_csv_line(v)) {
    std::size_t w = 0;
    parse_int(std::string(f), w);
    out.push_back(w);
  }
}

void parse_into(const std::string& v, std::optional<double>& out) {
  if (v == "auto") {
    out.reset();
    return;
  }
  double d = 0.0;
  parse_into(v, d);
  out = d;
}

void parse_into(const std::string& v, std::array<double, 4>& out) {
  const auto f = split_csv_line(v);
  if (f.size() != 4) throw config_error("expected four comma-separated numbers, got '" + v + "'");
  for (std::size_t i = 0; i < 4; ++i) parse_into(std::string(f[i]), out[i]);
}

std::string format(double v) { return format_double(v); }
template <std::unsigned_integral Int>
std::string format(Int v) {
  return std::to_string(v);
}
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}
std::string format(const std::optional<double>& v) { return v ? format_double(*v) : "auto"; }
std::string format(const std::array<double, 4>& v) {
  return format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]) + "," + format_double(v[3]);
}

// ---------------------------------------------------------------------------
// Key registry

using Scope = std::function<bool(const ExperimentConfig&)>;

struct Field {
  std::string key;
  Scope applies;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Access>
Field field(std::string key, Scope scope, Access access) {
  return {key, std::move(scope),
          [access](ExperimentConfig& c, const std::string& v) { parse_into(v, access(c)); },
          [access](const ExperimentConfig& c) { return format(access(const_cast<ExperimentConfig&>(c))); }};
}

// Domain bounds and the cylinder mask are stored in vectors / optionals.
Field domain_bound(std::string key, bool upper, std::size_t axis, Scope scope) {
  return {key, std::move(scope),
          [=](ExperimentConfig& c, const std::string& v) {
            double d = 0.0;
            parse_into(v, d);
            (upper ? c.rans.domain.upper : c.rans.domain.lower)[axis] = d;
          },
          [=](const ExperimentConfig& c) {
            return format_double((upper ? c.rans.domain.upper : c.rans.domain.lower)[axis]);
          }};
}

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = [] {
    const Scope any = [](const ExperimentConfig&) { return true; };
    const Scope vdp = [](const ExperimentConfig& c) { return c.problem == ProblemKind::kVdp; };
    const Scope rans = [](const ExperimentConfig& c) { return is_rans(c.problem); };
    const Scope manufactured = [](const ExperimentConfig& c) { return c.problem == ProblemKind::kRansManufactured; };
    const Scope csv = [](const ExperimentConfig& c) { return c.problem == ProblemKind::kRansCsv; };
    const Scope bpinn = [](const ExperimentConfig& c) { return is_bpinn(c.method); };
    const Scope bpinn_rans = [](const ExperimentConfig& c) { return is_bpinn(c.method) && is_rans(c.problem); };
    const Scope hmc = [](const ExperimentConfig& c) { return c.method == MethodKind::kBpinnHmc; };
    const Scope nuts = [](const ExperimentConfig& c) { return c.method == MethodKind::kBpinnNuts; };
    const Scope trained = [](const ExperimentConfig& c) { return !is_bpinn(c.method); };
    const Scope dropout = [](const ExperimentConfig& c) { return c.method == MethodKind::kMcDropout; };
    const Scope ensemble = [](const ExperimentConfig& c) { return is_ensemble(c.method); };
    const Scope repulsive = [](const ExperimentConfig& c) {
      return c.method == MethodKind::kRdeFunction || c.method == MethodKind::kRdeParameter;
    };
    const Scope fspace = [](const ExperimentConfig& c) { return c.method != MethodKind::kRdeParameter && is_ensemble(c.method); };

    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(field("seed", any, [](C& c) -> auto& { return c.seed; }));
    f.push_back(field("n_collocation", vdp, [](C& c) -> auto& { return c.vdp.n_collocation; }));
    f.push_back(field("n_collocation", rans, [](C& c) -> auto& { return c.rans.n_collocation; }));
    f.push_back(field("noise_sigma", vdp, [](C& c) -> auto& { return c.vdp.noise_sigma; }));
    f.push_back(field("noise_sigma", rans, [](C& c) -> auto& { return c.rans.noise_sigma; }));
    f.push_back(field("recalibrate", any, [](C& c) -> auto& { return c.recalibrate; }));

    f.push_back(field("vdp.epsilon", vdp, [](C& c) -> auto& { return c.vdp.params.epsilon; }));
    f.push_back(field("vdp.omega0", vdp, [](C& c) -> auto& { return c.vdp.params.omega0; }));
    f.push_back(field("vdp.u0", vdp, [](C& c) -> auto& { return c.vdp.u0; }));
    f.push_back(field("vdp.v0", vdp, [](C& c) -> auto& { return c.vdp.v0; }));
    f.push_back(field("vdp.t_end", vdp, [](C& c) -> auto& { return c.vdp.t_end; }));
    f.push_back(field("vdp.tolerance", vdp, [](C& c) -> auto& { return c.vdp.tolerance; }));
    f.push_back(field("vdp.grid_points", vdp, [](C& c) -> auto& { return c.vdp.grid_points; }));
    f.push_back(field("vdp.stride", vdp, [](C& c) -> auto& { return c.vdp.stride; }));
    f.push_back(field("vdp.test_stride", vdp, [](C& c) -> auto& { return c.vdp.test_stride; }));
    f.push_back(field("vdp.residual_scale", vdp, [](C& c) -> auto& { return c.vdp_residual_scale; }));

    f.push_back(field("rans.reynolds", rans, [](C& c) -> auto& { return c.reynolds; }));
    f.push_back(field("rans.grid_csv", csv, [](C& c) -> auto& { return c.grid_csv; }));
    f.push_back(domain_bound("domain.x_min", false, 0, rans));
    f.push_back(domain_bound("domain.x_max", true, 0, rans));
    f.push_back(domain_bound("domain.y_min", false, 1, rans));
    f.push_back(domain_bound("domain.y_max", true, 1, rans));
    f.push_back({"domain.cylinder_radius", rans,
                 [](C& c, const std::string& v) {
                   double r = 0.0;
                   parse_into(v, r);
                   if (r == 0.0) {
                     c.rans.domain.mask.reset();
                   } else {
                     c.rans.domain.mask = CylinderMask{0.0, 0.0, r};
                   }
                 },
                 [](const C& c) { return format_double(c.rans.domain.mask ? c.rans.domain.mask->radius : 0.0); }});
    f.push_back(field("layout.n_boundary", rans, [](C& c) -> auto& { return c.rans.layout.n_boundary; }));
    f.push_back(field("layout.boundary_width", rans, [](C& c) -> auto& { return c.rans.layout.boundary_width; }));
    f.push_back(field("layout.n_patch", rans, [](C& c) -> auto& { return c.rans.layout.n_patch; }));
    f.push_back(field("layout.patch", rans, [](C& c) -> auto& { return c.rans.layout.patch; }));
    f.push_back(field("grid.nx", manufactured, [](C& c) -> auto& { return c.rans.grid_nx; }));
    f.push_back(field("grid.ny", manufactured, [](C& c) -> auto& { return c.rans.grid_ny; }));

    f.push_back(field("net.hidden", any, [](C& c) -> auto& { return c.hidden; }));
    f.push_back(field("net.normalize_inputs", any, [](C& c) -> auto& { return c.normalize_inputs; }));
    f.push_back(field("net.init_gain", any, [](C& c) -> auto& { return c.init_gain; }));

    f.push_back(field("posterior.sigma_prior", bpinn, [](C& c) -> auto& { return c.posterior.sigma_prior; }));
    f.push_back(field("posterior.sigma_u", bpinn, [](C& c) -> auto& { return c.posterior.sigma_u; }));
    f.push_back(field("posterior.sigma_v", bpinn_rans, [](C& c) -> auto& { return c.posterior.sigma_v; }));
    f.push_back(field("posterior.sigma_fx", bpinn_rans, [](C& c) -> auto& { return c.posterior.sigma_fx; }));
    f.push_back(field("posterior.sigma_fy", bpinn_rans, [](C& c) -> auto& { return c.posterior.sigma_fy; }));
    f.push_back(field("posterior.sigma_pde", bpinn, [](C& c) -> auto& { return c.posterior.sigma_pde; }));
    f.push_back(field("posterior.beta_d", bpinn, [](C& c) -> auto& { return c.posterior.beta_d; }));
    f.push_back(field("posterior.beta_f", bpinn_rans, [](C& c) -> auto& { return c.posterior.beta_f; }));
    f.push_back(field("posterior.beta_r", bpinn, [](C& c) -> auto& { return c.posterior.beta_r; }));
    f.push_back(field("init", bpinn, [](C& c) -> auto& { return c.init; }));
    f.push_back(field("map.stage_a_iters", bpinn, [](C& c) -> auto& { return c.map.stage_a_iters; }));
    f.push_back(field("map.stage_b_iters", bpinn, [](C& c) -> auto& { return c.map.stage_b_iters; }));
    f.push_back(field("map.stage_c_iters", bpinn, [](C& c) -> auto& { return c.map.stage_c_iters; }));
    f.push_back(field("map.ramp_window", bpinn, [](C& c) -> auto& { return c.map.ramp_window; }));
    f.push_back(field("map.pde_minibatch", bpinn, [](C& c) -> auto& { return c.map.pde_minibatch; }));
    f.push_back(field("map.lr_a", bpinn, [](C& c) -> auto& { return c.map.lr_a; }));
    f.push_back(field("map.lr_b", bpinn, [](C& c) -> auto& { return c.map.lr_b; }));
    f.push_back(field("map.cosine_decay_b", bpinn, [](C& c) -> auto& { return c.map.cosine_decay_b; }));
    f.push_back(field("map.lbfgs_memory", bpinn, [](C& c) -> auto& { return c.map.lbfgs_memory; }));
    f.push_back(field("hmc.step_size", hmc, [](C& c) -> auto& { return c.hmc.step_size; }));
    f.push_back(field("hmc.n_leapfrog", hmc, [](C& c) -> auto& { return c.hmc.n_leapfrog; }));
    f.push_back(field("hmc.burn_in", hmc, [](C& c) -> auto& { return c.hmc.burn_in; }));
    f.push_back(field("hmc.n_samples", hmc, [](C& c) -> auto& { return c.hmc.n_samples; }));
    f.push_back(field("hmc.adapt_step_size", hmc, [](C& c) -> auto& { return c.hmc.adapt_step_size; }));
    f.push_back(field("hmc.target_accept", hmc, [](C& c) -> auto& { return c.hmc.target_accept; }));
    f.push_back(field("hmc.subsample", hmc, [](C& c) -> auto& { return c.hmc_subsample; }));
    f.push_back(field("nuts.max_tree_depth", nuts, [](C& c) -> auto& { return c.nuts.max_tree_depth; }));
    f.push_back(field("nuts.target_accept", nuts, [](C& c) -> auto& { return c.nuts.target_accept; }));
    f.push_back(field("nuts.warmup", nuts, [](C& c) -> auto& { return c.nuts.warmup; }));
    f.push_back(field("nuts.n_samples", nuts, [](C& c) -> auto& { return c.nuts.n_samples; }));
    f.push_back(field("nuts.adapt_mass", nuts, [](C& c) -> auto& { return c.nuts.adapt_mass; }));
    f.push_back(field("nuts.subsample", nuts, [](C& c) -> auto& { return c.nuts_subsample; }));
    f.push_back(field("tune.enabled", bpinn, [](C& c) -> auto& { return c.tune; }));
    f.push_back(field("tune.max_iterations", bpinn, [](C& c) -> auto& { return c.tune_rules.max_iterations; }));

    f.push_back(field("train.epochs", trained, [](C& c) -> auto& { return c.train.epochs; }));
    f.push_back(field("train.lr", trained, [](C& c) -> auto& { return c.train.lr; }));
    f.push_back(field("train.weight_decay", trained, [](C& c) -> auto& { return c.train.weight_decay; }));
    f.push_back(field("train.cosine_decay", trained, [](C& c) -> auto& { return c.train.cosine_decay; }));
    f.push_back(field("train.lambda_pde", trained, [](C& c) -> auto& { return c.train.lambda_pde; }));
    f.push_back(field("train.ramp_fraction", trained, [](C& c) -> auto& { return c.train.ramp_fraction; }));
    f.push_back(field("train.pde_minibatch", trained, [](C& c) -> auto& { return c.train.pde_minibatch; }));
    f.push_back(field("train.history_stride", trained, [](C& c) -> auto& { return c.train.history_stride; }));
    f.push_back(field("dropout.rate", dropout, [](C& c) -> auto& { return c.dropout_rate; }));
    f.push_back(field("dropout.samples", dropout, [](C& c) -> auto& { return c.dropout_samples; }));
    f.push_back(field("ensemble.members", ensemble, [](C& c) -> auto& { return c.members; }));
    f.push_back(field("ensemble.lambda_rep", repulsive, [](C& c) -> auto& { return c.lambda_rep; }));
    f.push_back(field("ensemble.bandwidth", repulsive, [](C& c) -> auto& { return c.bandwidth; }));
    f.push_back(field("ensemble.bandwidth_warmup_fraction", repulsive,
                      [](C& c) -> auto& { return c.bandwidth_warmup_fraction; }));
    f.push_back(field("ensemble.n_rep", fspace, [](C& c) -> auto& { return c.n_rep; }));
    return f;
  }();
  return fields;
}

const Field* find_field(const ExperimentConfig& c, const std::string& key) {
  for (const auto& f : registry()) {
    if (f.key == key && f.applies(c)) return &f;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> config_keys(const ExperimentConfig& config) {
  std::vector<std::string> keys{"problem", "method"};
  for (const auto& f : registry()) {
    if (f.applies(config)) keys.push_back(f.key);
  }
  return keys;
}

std::string get_value(const ExperimentConfig& config, const std::string& key) {
  if (key == "problem") return to_string(config.problem);
  if (key == "method") return to_string(config.method);
  const Field* f = find_field(config, key);
  if (!f) throw config_error("unknown key '" + key + "'");
  return f->get(config);
}

void set_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  if (key == "problem" || key == "method") {
    if (get_value(config, key) != value) throw config_error("'" + key + "' cannot change once defaults are applied");
    return;
  }
  const Field* f = find_field(config, key);
  if (!f) {
    throw config_error("unknown key '" + key + "' for problem " + to_string(config.problem) + " / method " +
                       to_string(config.method));
  }
  try {
    f->set(config, value);
  } catch (const Error& e) {
    throw config_error(key + ": " + e.what());
  }
}

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw config_error("expected 'key = value'", n);
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    if (key.empty()) throw config_error("empty key", n);
    if (!seen.insert(key).second) throw config_error("duplicate key '" + key + "'", n);
    out.push_back({key, value, n});
  }
  return out;
}

ExperimentConfig build_config(const std::vector<ConfigEntry>& entries, const std::vector<ConfigEntry>& overrides) {
  std::optional<std::string> problem, method;
  for (const auto* list : {&entries, &overrides}) {
    for (const auto& e : *list) {
      if (e.key == "problem") problem = e.value;
      if (e.key == "method") method = e.value;
    }
  }
  if (!problem) throw config_error("missing required key 'problem'");
  if (!method) throw config_error("missing required key 'method'");
  ExperimentConfig c = default_config(parse_problem(*problem), parse_method(*method));
  for (const auto* list : {&entries, &overrides}) {
    for (const auto& e : *list) {
      if (e.key == "problem" || e.key == "method") continue;
      try {
        set_value(c, e.key, e.value);
      } catch (const Error& err) {
        if (e.line == 0) throw;
        throw config_error(err.what(), e.line);
      }
    }
  }
  validate_config(c);
  return c;
}

ExperimentConfig load_config_file(const std::string& path, const std::vector<ConfigEntry>& overrides) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return build_config(parse_config_text(ss.str()), overrides);
}

void validate_config(const ExperimentConfig& c) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw config_error(what);
  };
  check(!c.hidden.empty(), "net.hidden needs at least one hidden layer");
  check(std::all_of(c.hidden.begin(), c.hidden.end(), [](std::size_t w) { return w > 0; }), "net.hidden widths must be positive");
  check(c.init_gain > 0.0, "net.init_gain must be positive");
  check(c.n_collocation() > 0, "n_collocation must be positive");
  check(c.noise_sigma() >= 0.0, "noise_sigma must be non-negative");
  if (c.problem == ProblemKind::kRansCsv) check(!c.grid_csv.empty(), "rans.grid_csv is required for rans-csv");
  if (is_rans(c.problem)) check(c.reynolds > 0.0, "rans.reynolds must be positive");
  try {
    if (c.problem == ProblemKind::kVdp) {
      check(c.vdp.tolerance > 0.0, "vdp.tolerance must be positive");
      check(c.vdp.t_end > 0.0, "vdp.t_end must be positive");
      check(c.vdp.grid_points >= 2, "vdp.grid_points must be at least 2");
      check(c.vdp.stride > 0 && c.vdp.stride < c.vdp.grid_points, "vdp.stride must be in [1, vdp.grid_points)");
      check(c.vdp.test_stride > 0 && c.vdp.test_stride < c.vdp.grid_points, "vdp.test_stride must be in [1, vdp.grid_points)");
    } else {
      c.rans.domain.validate();
    }
    if (is_bpinn(c.method)) {
      c.posterior.validate();
      check(c.init == "map" || c.init == "random", "init must be 'map' or 'random'");
      if (c.init == "map") c.map.validate();
      if (c.method == MethodKind::kBpinnHmc) c.hmc.validate();
      if (c.method == MethodKind::kBpinnNuts) {
        c.nuts.validate();
        check(c.nuts_subsample <= c.n_collocation(), "nuts.subsample exceeds n_collocation");
      }
      check(c.hmc_subsample <= c.n_collocation(), "hmc.subsample exceeds n_collocation");
      check(c.tune_rules.max_iterations >= 1, "tune.max_iterations must be positive");
    } else {
      c.train.validate();
    }
    if (c.method == MethodKind::kMcDropout) {
      check(c.dropout_rate > 0.0 && c.dropout_rate < 1.0, "dropout.rate must be in (0, 1)");
      check(c.dropout_samples >= 2, "dropout.samples must be at least 2");
    }
    if (is_ensemble(c.method)) {
      check(c.members >= 2, "ensemble.members must be at least 2");
      check(c.lambda_rep >= 0.0, "ensemble.lambda_rep must be non-negative");
      check(!c.bandwidth || *c.bandwidth > 0.0, "ensemble.bandwidth must be positive or 'auto'");
      check(c.bandwidth_warmup_fraction >= 0.0 && c.bandwidth_warmup_fraction <= 1.0,
            "ensemble.bandwidth_warmup_fraction must be in [0, 1]");
      if (c.method != MethodKind::kRdeParameter) check(c.n_rep > 0, "ensemble.n_rep must be positive");
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) throw;
    throw config_error(e.what());
  }
}

std::string config_to_text(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& key : config_keys(config)) {
    const auto dot = key.find('.');
    const std::string s = dot == std::string::npos ? "" : key.substr(0, dot);
    if (s != section && !out.empty()) out += "\n";
    section = s;
    out += key + " = " + get_value(config, key) + "\n";
  }
  return out;
}

std::map<std::string, std::string> config_to_map(const ExperimentConfig& config) {
  std::map<std::string, std::string> m;
  for (const auto& key : config_keys(config)) m[key] = get_value(config, key);
  return m;
}

ExperimentConfig config_from_map(const std::map<std::string, std::string>& values) {
  std::vector<ConfigEntry> entries;
  for (const auto& [k, v] : values) entries.push_back({k, v, 0});
  return build_config(entries);
}

}  // namespace pinnuq::cli
