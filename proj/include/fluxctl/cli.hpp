#pragma once

/**
 * @file
 * @brief Command implementations behind the fluxctl executable.
 *
 * Each command reads a JSON config, writes its outputs into an output
 * directory and finishes with a run manifest `<command>.manifest.json` that
 * lists the config hash, every input and output file with content hashes,
 * the seed, the toolkit version and the wall-clock time. JSON outputs carry
 * a "manifest" field naming that file.
 */

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "fba.hpp"
#include "format.hpp"
#include "hybridsim.hpp"
#include "mpc.hpp"
#include "network.hpp"
#include "optctl.hpp"
#include "parallel.hpp"
#include "surrogate.hpp"

#ifndef FLUXCTL_VERSION
#define FLUXCTL_VERSION "0.0.0"
#endif

namespace fluxctl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr std::uint64_t kDefaultSeed = 42;

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"fba",      "gen-data", "train",      "simulate",
                                                 "optimize", "mpc",      "yield-space"};
  return names;
}

// Config schema: allowed keys and their JSON types, per command and per nested section.

enum class FieldKind { Number, Integer, Boolean, String, NumberArray, Object, Array };

struct FieldSpec {
  FieldKind kind;
  bool required = false;
  std::string section;  ///< schema name for Object fields and Array elements
};

using Schema = std::map<std::string, FieldSpec>;

inline const std::map<std::string, Schema>& schemas() {
  using K = FieldKind;
  static const std::map<std::string, Schema> s = {
      {"fba",
       {{"network", {K::String}}, {"v_man", {K::NumberArray, true}}, {"objective", {K::String}},
        {"seed", {K::Integer}}}},
      {"gen-data",
       {{"network", {K::String}}, {"grid", {K::Object, false, "grid"}}, {"include_remaining", {K::Boolean}},
        {"seed", {K::Integer}}}},
      {"grid",
       {{"v_max", {K::Number}}, {"step", {K::Number}}, {"frac_max", {K::Number}}, {"frac_step", {K::Number}}}},
      {"train",
       {{"dataset", {K::String, true}}, {"split", {K::Object, false, "split"}},
        {"training", {K::Object, false, "training"}}, {"seed", {K::Integer}}}},
      {"split", {{"test_fraction", {K::Number}}, {"train_fraction_of_rest", {K::Number}}}},
      {"training",
       {{"epochs", {K::Integer}}, {"batch_size", {K::Integer}}, {"learning_rate", {K::Number}},
        {"hidden", {K::NumberArray}}}},
      {"simulate",
       {{"model", {K::String, true}}, {"z0", {K::NumberArray}}, {"schedule", {K::Array, false, "segment"}},
        {"schedule_csv", {K::String}}, {"kinetics", {K::Object, false, "kinetics"}}, {"max_step", {K::Number}},
        {"v_max", {K::Number}}, {"seed", {K::Integer}}}},
      {"segment", {{"t_start", {K::Number, true}}, {"t_end", {K::Number, true}}, {"V4", {K::Number, true}},
                   {"V6", {K::Number, true}}}},
      {"kinetics", {{"k_A", {K::Number}}, {"rate_scale", {K::Number}}}},
      {"optimize",
       {{"model", {K::String, true}}, {"scenario", {K::String}}, {"z0", {K::NumberArray}}, {"t0", {K::Number}},
        {"t_f", {K::Number}}, {"dt_control", {K::Number}}, {"r_G_target", {K::Number}}, {"v_max", {K::Number}},
        {"kinetics", {K::Object, false, "kinetics"}}, {"max_step", {K::Number}},
        {"solver", {K::Object, false, "solver"}}, {"seed", {K::Integer}}}},
      {"solver",
       {{"max_outer", {K::Integer}}, {"max_inner", {K::Integer}}, {"restarts", {K::Integer}},
        {"constraint_tol", {K::Number}}, {"rho0", {K::Number}}}},
      {"mpc",
       {{"model", {K::String, true}}, {"z0", {K::NumberArray}}, {"t0", {K::Number}}, {"t_f", {K::Number}},
        {"sampling", {K::Number}}, {"r_G_target", {K::Number}}, {"mismatch", {K::Number}}, {"v_max", {K::Number}},
        {"warm_start", {K::Boolean}}, {"horizon", {K::String}}, {"kinetics", {K::Object, false, "kinetics"}},
        {"max_step", {K::Number}}, {"actuator", {K::Object, false, "actuator"}},
        {"solver", {K::Object, false, "solver"}}, {"consistency_tolerance", {K::Number}}, {"seed", {K::Integer}}}},
      {"actuator",
       {{"kind", {K::String}}, {"a", {K::NumberArray}}, {"b", {K::NumberArray}}, {"v_sat", {K::NumberArray}},
        {"lo", {K::NumberArray}}, {"hi", {K::NumberArray}}}},
      {"yield-space", {{"dataset", {K::String, true}}, {"seed", {K::Integer}}}},
  };
  return s;
}

inline bool kind_matches(const nlohmann::json& v, FieldKind k) {
  switch (k) {
    case FieldKind::Number: return v.is_number();
    case FieldKind::Integer: return v.is_number_integer();
    case FieldKind::Boolean: return v.is_boolean();
    case FieldKind::String: return v.is_string();
    case FieldKind::Object: return v.is_object();
    case FieldKind::Array: return v.is_array();
    case FieldKind::NumberArray:
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!e.is_number()) return false;
      return true;
  }
  return false;
}

inline void validate_against(const nlohmann::json& j, const std::string& schema_name, const std::string& where) {
  if (!j.is_object()) throw ValidationError("config" + where + ": expected an object");
  const Schema& schema = schemas().at(schema_name);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto f = schema.find(it.key());
    if (f == schema.end()) throw ValidationError("config" + where + ": unknown key '" + it.key() + "'");
    if (!kind_matches(it.value(), f->second.kind))
      throw ValidationError("config" + where + ": key '" + it.key() + "' has the wrong type");
    const std::string sub = where + "." + it.key();
    if (f->second.kind == FieldKind::Object) validate_against(it.value(), f->second.section, sub);
    if (f->second.kind == FieldKind::Array)
      for (std::size_t i = 0; i < it.value().size(); ++i)
        validate_against(it.value()[i], f->second.section, sub + "[" + std::to_string(i) + "]");
  }
  for (const auto& [key, spec] : schema)
    if (spec.required && !j.contains(key)) throw ValidationError("config" + where + ": missing key '" + key + "'");
}

/// Throws ValidationError unless `cfg` is a valid config for `command`.
inline void validate_config(const std::string& command, const nlohmann::json& cfg) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end())
    throw ValidationError("unknown command '" + command + "'");
  validate_against(cfg, command, "");
}

// Run context: output directory, seed and the file lists that end up in the manifest.

struct RunOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

inline std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

class RunContext {
 public:
  RunContext(std::string command, RunOptions opts) : command_(std::move(command)), opts_(std::move(opts)) {}

  const std::string& command() const { return command_; }
  const std::string& out_dir() const { return opts_.out_dir; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }
  std::optional<std::uint64_t> seed_override() const { return opts_.seed; }
  std::string manifest_name() const { return command_ + ".manifest.json"; }
  std::string manifest_path() const { return join(manifest_name()); }
  std::string diagnostics_path() const { return join(command_ + ".diagnostics.json"); }

  std::string join(const std::string& name) const { return (std::filesystem::path(opts_.out_dir) / name).string(); }

  /// Expands "{out}" and checks that the file exists.
  std::string input(const std::string& raw) {
    std::string path = raw;
    const std::string token = "{out}";
    for (auto pos = path.find(token); pos != std::string::npos; pos = path.find(token))
      path.replace(pos, token.size(), opts_.out_dir);
    if (!std::filesystem::exists(path)) throw ValidationError("input file '" + path + "' does not exist");
    inputs_.push_back(path);
    return path;
  }

  std::string output(const std::string& name) {
    const std::string path = join(name);
    outputs_.push_back(path);
    return path;
  }

  /// JSON output that names its manifest.
  void write_json(const std::string& name, nlohmann::json j) {
    j["manifest"] = manifest_name();
    std::ofstream os(output(name));
    if (!os) throw ParseError("cannot open '" + join(name) + "' for writing");
    os << j.dump(2) << '\n';
  }

  template <typename Writer>
  void write_text(const std::string& name, Writer&& w) {
    std::ofstream os(output(name));
    if (!os) throw ParseError("cannot open '" + join(name) + "' for writing");
    w(os);
  }

  nlohmann::json manifest(const std::string& status, double wall_clock_s) const {
    using nlohmann::json;
    json files_in = json::array(), files_out = json::array();
    for (const auto& p : inputs_) files_in.push_back({{"path", p}, {"fnv1a64", file_hash(p)}});
    for (const auto& p : outputs_)
      if (std::filesystem::exists(p)) files_out.push_back({{"path", p}, {"fnv1a64", file_hash(p)}});
    json m;
    m["command"] = command_;
    m["config"] = opts_.config_path;
    m["config_hash"] = std::filesystem::exists(opts_.config_path) ? json(file_hash(opts_.config_path)) : json(nullptr);
    m["inputs"] = files_in;
    m["outputs"] = files_out;
    m["seed"] = seed_;
    m["version"] = FLUXCTL_VERSION;
    m["threads"] = worker_count();
    m["status"] = status;
    m["timestamp"] = utc_timestamp();
    m["wall_clock_s"] = wall_clock_s;
    return m;
  }

  static std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
  }

 private:
  std::string command_;
  RunOptions opts_;
  std::uint64_t seed_ = kDefaultSeed;
  std::vector<std::string> inputs_, outputs_;
};

// Config readers.

inline nlohmann::json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

inline double num(const nlohmann::json& j, const char* key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}

template <std::size_t N>
inline std::array<double, N> fixed_array(const nlohmann::json& j, const char* key, std::array<double, N> fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != N) throw ValidationError(std::string("config: '") + key + "' needs " + std::to_string(N) + " values");
  std::array<double, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

inline ExtracellularState read_z0(const nlohmann::json& j, const ExtracellularState& fallback) {
  if (!j.contains("z0")) return fallback;
  const auto a = fixed_array<kNumStates>(j, "z0", {});
  return Eigen::Map<const ExtracellularState>(a.data());
}

inline KineticParams read_kinetics(const nlohmann::json& j) {
  KineticParams k;
  if (j.contains("kinetics")) {
    const auto& s = j.at("kinetics");
    k.k_A = num(s, "k_A", k.k_A);
    k.rate_scale = num(s, "rate_scale", k.rate_scale);
  }
  k.validate();
  return k;
}

inline IntegratorOptions read_integrator(const nlohmann::json& j) {
  IntegratorOptions o;
  o.max_step = num(j, "max_step", o.max_step);
  if (!(o.max_step > 0)) throw ValidationError("config: max_step must be positive");
  return o;
}

inline OcOptions read_solver(const nlohmann::json& j, std::uint64_t seed) {
  OcOptions o;
  o.seed = seed;
  if (!j.contains("solver")) return o;
  const auto& s = j.at("solver");
  o.max_outer = s.value("max_outer", o.max_outer);
  o.inner.max_iterations = s.value("max_inner", o.inner.max_iterations);
  o.restarts = s.value("restarts", o.restarts);
  o.constraint_tol = num(s, "constraint_tol", o.constraint_tol);
  o.rho0 = num(s, "rho0", o.rho0);
  if (o.max_outer < 1 || o.inner.max_iterations < 1 || o.restarts < 1)
    throw ValidationError("config: solver iteration counts must be at least 1");
  if (!(o.constraint_tol > 0 && o.rho0 > 0)) throw ValidationError("config: solver tolerances must be positive");
  return o;
}

inline MetabolicNetwork read_network(const nlohmann::json& j, RunContext& ctx) {
  const std::string ref = j.value("network", std::string("canonical"));
  MetabolicNetwork net = ref == "canonical" ? build_canonical_network() : load_network(ctx.input(ref));
  net.validate();
  return net;
}

/// Loads a surrogate whose first five outputs are the rates in state order.
inline SurrogateModel read_model(const nlohmann::json& j, RunContext& ctx) {
  SurrogateModel m = load_model(ctx.input(j.at("model").get<std::string>()));
  static const std::vector<std::string> expected = {"q_A", "q_D", "q_F", "q_G", "mu"};
  const auto& names = m.metadata.label_names;
  if (m.input_dim() != 2 || m.output_dim() < kNumStates)
    throw ValidationError("model must map 2 inputs to at least 5 outputs");
  if (!names.empty() && !std::equal(expected.begin(), expected.end(), names.begin()))
    throw ValidationError("model outputs must start with q_A, q_D, q_F, q_G, mu");
  return m;
}

inline ControlSchedule read_schedule_csv(const std::string& path, double v_max) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open schedule '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != "t_start,t_end,V4,V6")
    throw ParseError("schedule '" + path + "': expected header t_start,t_end,V4,V6");
  ControlSchedule s;
  s.v_max = v_max;
  std::vector<std::array<double, 2>> vals;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != 4) throw ParseError(where + ": expected 4 columns");
    const double t0 = parse_number(cells[0], where), t1 = parse_number(cells[1], where);
    if (s.t_grid.empty()) s.t_grid.push_back(t0);
    if (t0 != s.t_grid.back()) throw ParseError(where + ": intervals are not contiguous");
    s.t_grid.push_back(t1);
    vals.push_back({parse_number(cells[2], where), parse_number(cells[3], where)});
  }
  if (vals.empty()) throw ParseError("schedule '" + path + "' has no intervals");
  s.values.resize(static_cast<Eigen::Index>(vals.size()), 2);
  for (std::size_t k = 0; k < vals.size(); ++k) s.values.row(static_cast<Eigen::Index>(k)) << vals[k][0], vals[k][1];
  return s;
}

inline ControlSchedule read_schedule(const nlohmann::json& j, RunContext& ctx, double v_max) {
  const bool inline_sched = j.contains("schedule"), from_csv = j.contains("schedule_csv");
  if (inline_sched == from_csv) throw ValidationError("config: give exactly one of 'schedule' and 'schedule_csv'");
  ControlSchedule s;
  if (from_csv) {
    s = read_schedule_csv(ctx.input(j.at("schedule_csv").get<std::string>()), v_max);
  } else {
    const auto& segs = j.at("schedule");
    if (segs.empty()) throw ValidationError("config: schedule has no segments");
    s.v_max = v_max;
    s.values.resize(static_cast<Eigen::Index>(segs.size()), 2);
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const auto& seg = segs[k];
      const double t0 = seg.at("t_start").get<double>();
      if (k == 0) s.t_grid.push_back(t0);
      if (t0 != s.t_grid.back()) throw ValidationError("config: schedule segments are not contiguous");
      s.t_grid.push_back(seg.at("t_end").get<double>());
      s.values.row(static_cast<Eigen::Index>(k)) << seg.at("V4").get<double>(), seg.at("V6").get<double>();
    }
  }
  s.validate();
  return s;
}

inline nlohmann::json state_json(const ExtracellularState& z) {
  return {{"A_ext", z[kA]}, {"D_ext", z[kD]}, {"F_ext", z[kF]}, {"G_ext", z[kG]}, {"Bio", z[kBio]}};
}

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

// Commands. Each returns the JSON summary it also writes (or prints).

inline nlohmann::json cmd_fba(const nlohmann::json& cfg, RunContext& ctx) {
  const MetabolicNetwork net = read_network(cfg, ctx);
  const auto v = cfg.at("v_man").get<std::vector<double>>();
  if (v.size() != net.manipulatable_set.size())
    throw ValidationError("config: v_man needs " + std::to_string(net.manipulatable_set.size()) + " values");
  int objective = net.growth_flux_index;
  if (cfg.contains("objective")) {
    const auto name = cfg.at("objective").get<std::string>();
    const auto it = std::find(net.flux_names.begin(), net.flux_names.end(), name);
    if (it == net.flux_names.end()) throw ValidationError("config: unknown objective flux '" + name + "'");
    objective = static_cast<int>(it - net.flux_names.begin());
  }
  const FluxSolution sol = solve_fba(net, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())),
                                     objective);
  nlohmann::json j;
  j["status"] = to_string(sol.status);
  j["objective"] = net.flux_names[static_cast<std::size_t>(objective)];
  j["objective_value"] = finite_or_null(sol.objective_value);
  nlohmann::json vm = nlohmann::json::object(), fl = nlohmann::json::object();
  for (std::size_t i = 0; i < net.manipulatable_set.size(); ++i)
    vm[net.flux_names[static_cast<std::size_t>(net.manipulatable_set[i])]] = v[i];
  j["v_man"] = vm;
  if (sol.optimal())
    for (int f = 0; f < net.num_fluxes(); ++f) fl[net.flux_names[static_cast<std::size_t>(f)]] = sol.v_full[f];
  j["fluxes"] = fl;
  j["network_hash"] = network_hash(net);
  ctx.write_json("fba.json", j);
  ctx.write_text("fba.csv", [&](std::ostream& os) {
    os << "flux,value\n";
    if (sol.optimal())
      for (int f = 0; f < net.num_fluxes(); ++f)
        os << net.flux_names[static_cast<std::size_t>(f)] << ',' << format_double(sol.v_full[f]) << '\n';
  });
  return j;
}

inline nlohmann::json cmd_gen_data(const nlohmann::json& cfg, RunContext& ctx) {
  const MetabolicNetwork net = read_network(cfg, ctx);
  GridSpec spec = GridSpec::uniform();
  if (cfg.contains("grid")) {
    const auto& g = cfg.at("grid");
    const double v_max = num(g, "v_max", 10.0), step = num(g, "step", 0.2);
    const double frac_max = num(g, "frac_max", 0.5), frac_step = num(g, "frac_step", 0.01);
    if (!(v_max > 0 && step > 0 && frac_max >= 0 && frac_step > 0))
      throw ValidationError("config: grid values must be positive");
    spec = GridSpec::uniform(v_max, step, frac_max, frac_step);
  }
  const Dataset ds = build_dataset(net, spec, cfg.value("include_remaining", false));
  const std::string data_path = ctx.output("dataset.csv");
  save_dataset(ds, data_path);
  save_infeasible_log(ds, ctx.output("infeasible.csv"));
  return {{"rows", ds.rows()}, {"infeasible", ds.infeasible.size()}, {"provenance", ds.provenance}};
}

inline nlohmann::json cmd_train(const nlohmann::json& cfg, RunContext& ctx) {
  const Dataset ds = load_dataset(ctx.input(cfg.at("dataset").get<std::string>()));
  SplitSpec split;
  split.shuffle_seed = ctx.seed();
  if (cfg.contains("split")) {
    const auto& s = cfg.at("split");
    split.test_fraction = num(s, "test_fraction", split.test_fraction);
    split.train_fraction_of_rest = num(s, "train_fraction_of_rest", split.train_fraction_of_rest);
  }
  TrainConfig tc;
  tc.seed = ctx.seed();
  if (cfg.contains("training")) {
    const auto& t = cfg.at("training");
    tc.epochs = t.value("epochs", tc.epochs);
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.learning_rate = num(t, "learning_rate", tc.learning_rate);
    if (t.contains("hidden")) {
      tc.hidden.clear();
      for (double h : t.at("hidden").get<std::vector<double>>()) {
        if (h < 1 || h != std::floor(h)) throw ValidationError("config: hidden layer widths must be positive integers");
        tc.hidden.push_back(static_cast<int>(h));
      }
    }
  }
  const FitResult fit = fit_surrogate(ds, split, tc);
  save_model(fit.model, ctx.output("model.json"));
  nlohmann::json r2 = nlohmann::json::object(), rmse = nlohmann::json::object();
  const auto& md = fit.model.metadata;
  for (std::size_t i = 0; i < md.label_names.size(); ++i) {
    r2[md.label_names[i]] = finite_or_null(fit.test_r2[static_cast<Eigen::Index>(i)]);
    if (i < md.train_rmse.size()) rmse[md.label_names[i]] = md.train_rmse[i];
  }
  nlohmann::json j;
  j["test_r2"] = r2;
  j["train_rmse"] = rmse;
  j["rows"] = {{"train", fit.split.train.rows()}, {"val", fit.split.val.rows()}, {"test", fit.split.test.rows()}};
  j["best_epoch"] = md.best_epoch;
  j["best_val_loss"] = finite_or_null(md.best_val_loss);
  j["seed"] = ctx.seed();
  ctx.write_json("metrics.json", j);
  return j;
}

inline nlohmann::json cmd_simulate(const nlohmann::json& cfg, RunContext& ctx) {
  const SurrogateModel model = read_model(cfg, ctx);
  const double v_max = num(cfg, "v_max", 10.0);
  const ControlSchedule sched = read_schedule(cfg, ctx, v_max);
  const ExtracellularState z0 = read_z0(cfg, OcProblem{}.z0);
  const Trajectory tr = simulate(model, z0, sched, read_kinetics(cfg), read_integrator(cfg));
  save_trajectory(tr, ctx.output("trajectory.csv"));
  const auto zf = tr.final_state();
  return {{"final_state", state_json(zf)},
          {"F_plus_G", objective(zf)},
          {"carbon_drift", carbon_total(zf) - carbon_total(z0)}};
}

inline OcProblem read_problem(const nlohmann::json& cfg, const SurrogateModel& model) {
  OcProblem p;
  p.model = &model;
  p.z0 = read_z0(cfg, p.z0);
  p.t0 = num(cfg, "t0", p.t0);
  p.t_f = num(cfg, "t_f", p.t_f);
  p.dt_control = num(cfg, "dt_control", p.dt_control);
  if (cfg.contains("r_G_target")) p.r_G_target = cfg.at("r_G_target").get<double>();
  p.v_max = num(cfg, "v_max", p.v_max);
  p.kin = read_kinetics(cfg);
  p.integ = read_integrator(cfg);
  p.validate();
  return p;
}

inline nlohmann::json cmd_optimize(const nlohmann::json& cfg, RunContext& ctx) {
  const SurrogateModel model = read_model(cfg, ctx);
  const OcProblem p = read_problem(cfg, model);
  const OcSolution sol = solve_ocp(p, read_solver(cfg, ctx.seed()));
  ctx.write_text("schedule.csv", [&](std::ostream& os) { write_schedule_csv(sol.schedule, os); });
  save_trajectory(simulate(model, p.z0, sol.schedule, p.kin, p.integ), ctx.output("trajectory.csv"));
  nlohmann::json j = solution_summary(p, sol);
  if (cfg.contains("scenario")) j["scenario"] = cfg.at("scenario");
  j["mean_V4_0_1.5h"] = mean_v4(sol.schedule, p.t0, std::min(p.t_f, p.t0 + 1.5));
  if (p.t_f > p.t0 + 3.0) j["mean_V4_3h_end"] = mean_v4(sol.schedule, p.t0 + 3.0, p.t_f);
  ctx.write_json("summary.json", j);
  return j;
}

inline MpcConfig read_mpc_config(const nlohmann::json& cfg) {
  MpcConfig c;
  c.z0 = read_z0(cfg, c.z0);
  c.t0 = num(cfg, "t0", c.t0);
  c.t_f = num(cfg, "t_f", c.t_f);
  c.sampling = num(cfg, "sampling", c.sampling);
  c.r_G_target = num(cfg, "r_G_target", c.r_G_target);
  c.mismatch = num(cfg, "mismatch", c.mismatch);
  c.v_max = num(cfg, "v_max", c.v_max);
  c.warm_start = cfg.value("warm_start", c.warm_start);
  if (cfg.contains("horizon")) {
    const auto h = cfg.at("horizon").get<std::string>();
    if (h == "shrinking")
      c.horizon = HorizonMode::Shrinking;
    else if (h == "moving")
      c.horizon = HorizonMode::Moving;
    else
      throw ValidationError("config: horizon must be 'shrinking' or 'moving'");
  }
  c.kin = read_kinetics(cfg);
  c.integ = read_integrator(cfg);
  if (cfg.contains("actuator")) {
    const auto& a = cfg.at("actuator");
    ActuatorMap m;
    m.kind = actuator_kind_from_string(a.value("kind", std::string("identity")));
    m.a = fixed_array<2>(a, "a", m.a);
    m.b = fixed_array<2>(a, "b", m.b);
    m.v_sat = fixed_array<2>(a, "v_sat", m.v_sat);
    m.lo = fixed_array<2>(a, "lo", m.lo);
    m.hi = fixed_array<2>(a, "hi", m.hi);
    c.actuator = m;
  }
  c.validate();
  return c;
}

inline nlohmann::json cmd_mpc(const nlohmann::json& cfg, RunContext& ctx) {
  const SurrogateModel model = read_model(cfg, ctx);
  const MpcConfig mc = read_mpc_config(cfg);
  const OcOptions opts = read_solver(cfg, ctx.seed());
  const double tol = num(cfg, "consistency_tolerance", 0.01);
  const Plant plant = make_plant(mc.kin, mc.mismatch);

  const OcSolution nominal = nominal_open_loop(model, mc, opts);
  const ClosedLoopResult baseline = compare_open_loop(model, plant, nominal.schedule, mc);
  const ClosedLoopResult closed = run_mpc(model, plant, mc, opts);

  save_trajectory(closed.trajectory, ctx.output("mpc_trajectory.csv"));
  ctx.write_text("mpc_steps.csv", [&](std::ostream& os) { write_mpc_steps_csv(closed, os); });
  save_trajectory(baseline.trajectory, ctx.output("open_loop_trajectory.csv"));

  nlohmann::json j;
  j["mismatch"] = mc.mismatch;
  j["r_G_target"] = mc.r_G_target;
  j["closed_loop"] = closed_loop_summary(closed);
  j["open_loop_baseline"] = closed_loop_summary(baseline);
  j["open_loop_prediction"] = solution_summary(mc.problem(model, mc.t0, mc.z0), nominal);
  j["product_gain"] = baseline.product_final > 0 ? nlohmann::json(closed.product_final / baseline.product_final)
                                                 : nlohmann::json(nullptr);
  if (mc.mismatch == 1.0) {
    const double rel = std::abs(closed.product_final - nominal.J) / std::max(std::abs(nominal.J), 1e-12);
    j["nominal_consistency"] = {
        {"passed", rel <= tol}, {"J_mpc", closed.product_final}, {"J_open_loop", nominal.J}, {"rel_diff", rel},
        {"tolerance", tol}};
  }
  ctx.write_json("summary.json", j);
  return j;
}

inline nlohmann::json cmd_yield_space(const nlohmann::json& cfg, RunContext& ctx) {
  const YieldTable t = yield_space(load_dataset(ctx.input(cfg.at("dataset").get<std::string>())));
  save_yield_space(t, ctx.output("yield_space.csv"));
  return {{"points", t.points.size()}, {"omitted_zero_uptake", t.omitted_zero_uptake}};
}

// Driver with error classification.

struct RunOutcome {
  int exit_code = kExitOk;
  nlohmann::json result;  ///< command summary on success
  std::string error_line;  ///< one-line JSON on failure
};

inline std::string error_line(int code, const std::string& kind, const std::string& command, const std::string& message,
                              const std::optional<std::string>& diagnostics = std::nullopt) {
  nlohmann::json e = {{"exit_code", code}, {"kind", kind}, {"command", command}, {"message", message}};
  if (diagnostics) e["diagnostics"] = *diagnostics;
  return nlohmann::json{{"error", e}}.dump();
}

/// Runs one command end to end. Never throws; failures are reported through the outcome.
inline RunOutcome run_command(const std::string& command, const RunOptions& opts) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  RunOutcome out;
  RunContext ctx(command, opts);
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };
  auto write_manifest = [&](const std::string& status) {
    std::ofstream os(ctx.manifest_path());
    if (os) os << ctx.manifest(status, elapsed()).dump(2) << '\n';
  };
  try {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), command) == names.end())
      throw ValidationError("unknown command '" + command + "'");
    const nlohmann::json cfg = load_config(opts.config_path);
    validate_config(command, cfg);
    std::uint64_t seed = cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : kDefaultSeed;
    if (opts.seed) seed = *opts.seed;
    ctx.set_seed(seed);
    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    if (ec) throw ValidationError("cannot create output directory '" + opts.out_dir + "'");

    try {
      if (command == "fba")
        out.result = cmd_fba(cfg, ctx);
      else if (command == "gen-data")
        out.result = cmd_gen_data(cfg, ctx);
      else if (command == "train")
        out.result = cmd_train(cfg, ctx);
      else if (command == "simulate")
        out.result = cmd_simulate(cfg, ctx);
      else if (command == "optimize")
        out.result = cmd_optimize(cfg, ctx);
      else if (command == "mpc")
        out.result = cmd_mpc(cfg, ctx);
      else
        out.result = cmd_yield_space(cfg, ctx);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    write_manifest("ok");
  } catch (const NumericalError& e) {
    out.exit_code = kExitNumerical;
    const std::string diag = ctx.diagnostics_path();
    std::ofstream os(diag);
    if (os)
      os << nlohmann::json{{"command", command}, {"config", opts.config_path}, {"message", e.what()},
                           {"seed", ctx.seed()}, {"manifest", ctx.manifest_name()}}
                .dump(2)
         << '\n';
    out.error_line = error_line(kExitNumerical, "numerical", command, e.what(), diag);
    write_manifest("numerical_error");
  } catch (const std::exception& e) {
    // Parse, validation, integrity and I/O problems are all usage errors.
    out.exit_code = kExitUsage;
    out.error_line = error_line(kExitUsage, "usage", command, e.what());
    if (std::filesystem::is_directory(opts.out_dir)) write_manifest("usage_error");
  }
  return out;
}

}  // namespace fluxctl::cli
