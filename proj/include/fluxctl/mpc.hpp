#pragma once

/**
 * @file
 * @brief Shrinking-horizon model predictive control of the batch and the
 * actuator map between manipulated fluxes and external inputs.
 *
 * At every sampling instant the full plant state is fed back, the nominal
 * optimal control problem is re-solved on [t_k, t_f], and the first move is
 * passed through the actuator map and applied to the (mismatched) plant for
 * one sampling interval.
 */

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "format.hpp"
#include "hybridsim.hpp"
#include "optctl.hpp"

namespace fluxctl {

enum class ActuatorKind { Identity, Affine, Saturating };

inline std::string to_string(ActuatorKind k) {
  switch (k) {
    case ActuatorKind::Identity: return "identity";
    case ActuatorKind::Affine: return "affine";
    case ActuatorKind::Saturating: return "saturating";
  }
  return "?";
}

inline ActuatorKind actuator_kind_from_string(const std::string& s) {
  if (s == "identity") return ActuatorKind::Identity;
  if (s == "affine") return ActuatorKind::Affine;
  if (s == "saturating") return ActuatorKind::Saturating;
  throw ValidationError("actuator: unknown kind '" + s + "'");
}

/**
 * One external input per manipulated flux:
 *   identity    u = V
 *   affine      u = a V + b            (a != 0)
 *   saturating  u = V / (V_sat - V)    (V_sat above the admissible range)
 * `lo`/`hi` give the admissible flux range per input.
 */
struct ActuatorMap {
  ActuatorKind kind = ActuatorKind::Identity;
  std::array<double, 2> a{1.0, 1.0};
  std::array<double, 2> b{0.0, 0.0};
  std::array<double, 2> v_sat{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{10.0, 5.0};

  static ActuatorMap identity() { return {}; }
  static ActuatorMap affine(std::array<double, 2> a, std::array<double, 2> b) {
    ActuatorMap m;
    m.kind = ActuatorKind::Affine;
    m.a = a;
    m.b = b;
    return m;
  }
  static ActuatorMap saturating(std::array<double, 2> v_sat) {
    ActuatorMap m;
    m.kind = ActuatorKind::Saturating;
    m.v_sat = v_sat;
    return m;
  }

  void validate() const {
    for (int i = 0; i < 2; ++i) {
      if (!(lo[i] <= hi[i])) throw ValidationError("actuator: empty admissible range");
      if (kind == ActuatorKind::Affine && !(a[i] != 0.0 && std::isfinite(a[i]) && std::isfinite(b[i])))
        throw ValidationError("actuator: affine gain must be finite and non-zero");
      if (kind == ActuatorKind::Saturating && !(v_sat[i] > hi[i] && std::isfinite(v_sat[i])))
        throw ValidationError("actuator: V_sat must exceed the admissible flux range");
    }
  }

  double forward(int i, double v) const {
    switch (kind) {
      case ActuatorKind::Identity: return v;
      case ActuatorKind::Affine: return a[i] * v + b[i];
      case ActuatorKind::Saturating: return v / (v_sat[i] - v);
    }
    return v;
  }

  double inverse(int i, double u) const {
    switch (kind) {
      case ActuatorKind::Identity: return u;
      case ActuatorKind::Affine: return (u - b[i]) / a[i];
      case ActuatorKind::Saturating: return v_sat[i] * u / (1.0 + u);
    }
    return u;
  }

  Eigen::Vector2d to_input(const Eigen::Vector2d& v) const {
    for (int i = 0; i < 2; ++i)
      if (!(v[i] >= lo[i] && v[i] <= hi[i])) throw ValidationError("actuator: flux outside the admissible range");
    return {forward(0, v[0]), forward(1, v[1])};
  }

  /// Fluxes realized by input u; out-of-range results are clamped and reported in `warnings`.
  Eigen::Vector2d from_input(const Eigen::Vector2d& u, std::vector<std::string>* warnings = nullptr) const {
    Eigen::Vector2d v;
    for (int i = 0; i < 2; ++i) {
      const double raw = inverse(i, u[i]);
      v[i] = std::isnan(raw) ? lo[i] : std::clamp(raw, lo[i], hi[i]);
      if (warnings && !(raw >= lo[i] && raw <= hi[i]))
        warnings->push_back("input " + std::to_string(i + 1) + " = " + format_double(u[i]) +
                            " outside actuator range; clamped");
    }
    return v;
  }
};

enum class HorizonMode { Shrinking, Moving };

struct MpcConfig {
  double sampling = 0.5;
  double t0 = 0.0;
  double t_f = 9.0;
  double r_G_target = 0.5;
  HorizonMode horizon = HorizonMode::Shrinking;
  bool warm_start = true;
  double mismatch = 0.97;
  ExtracellularState z0 = (ExtracellularState() << 120, 0, 0, 0, 0.001).finished();
  KineticParams kin;
  double v_max = 10.0;
  IntegratorOptions integ;
  ActuatorMap actuator;

  int steps() const { return static_cast<int>(std::lround((t_f - t0) / sampling)); }

  void validate() const {
    if (!(sampling > 0) || !(t_f > t0)) throw ValidationError("mpc: need sampling > 0 and t_f > t0");
    const double n = (t_f - t0) / sampling;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n)) throw ValidationError("mpc: sampling must divide t_f - t0");
    if (horizon != HorizonMode::Shrinking) throw ValidationError("mpc: only the shrinking horizon is implemented");
    if (!(r_G_target >= 0 && r_G_target <= 1)) throw ValidationError("mpc: r_G_target must lie in [0, 1]");
    if (!(mismatch > 0 && mismatch <= 1)) throw ValidationError("mpc: mismatch factor must lie in (0, 1]");
    kin.validate();
    actuator.validate();
  }

  /// Nominal problem on [t_start, t_f] from state z, on the sampling grid.
  OcProblem problem(const SurrogateModel& model, double t_start, const ExtracellularState& z) const {
    OcProblem p;
    p.model = &model;
    p.z0 = z;
    p.t0 = t_start;
    p.t_f = t_f;
    p.dt_control = sampling;
    p.r_G_target = r_G_target;
    p.v_max = v_max;
    p.kin = kin;
    p.integ = integ;
    return p;
  }
};

struct MpcStep {
  double t_k = 0.0;
  Eigen::Vector2d v_cmd = Eigen::Vector2d::Zero();      ///< target fluxes from the optimizer
  Eigen::Vector2d u = Eigen::Vector2d::Zero();          ///< external inputs
  Eigen::Vector2d v_applied = Eigen::Vector2d::Zero();  ///< fluxes realized after the actuator round trip
  double J_pred = std::numeric_limits<double>::quiet_NaN();
  int solve_iters = 0;
  bool converged = true;
  int horizon_intervals = 0;
  std::vector<std::string> warnings;
};

struct ClosedLoopResult {
  Trajectory trajectory;
  std::vector<MpcStep> steps;
  double A_final = 0.0;
  double product_final = 0.0;  ///< F + G
  double r_G = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void append_segment(Trajectory& all, const Trajectory& seg) {
  const std::size_t skip = all.times.empty() ? 0 : 1;  // shared boundary point
  for (std::size_t i = skip; i < seg.times.size(); ++i) {
    all.times.push_back(seg.times[i]);
    all.states.push_back(seg.states[i]);
    all.controls.push_back(seg.controls[i]);
    all.rates.push_back(seg.rates[i]);
  }
  if (skip && !seg.controls.empty()) {
    // The boundary point belongs to the interval that starts there.
    const std::size_t at = all.times.size() - seg.times.size();
    all.controls[at] = seg.controls.front();
    all.rates[at] = seg.rates.front();
  }
}

inline Eigen::Vector2d enforce_coupling(Eigen::Vector2d v, std::vector<std::string>& warnings) {
  if (v[1] > 0.5 * v[0]) {
    if (v[1] - 0.5 * v[0] > 1e-9) warnings.push_back("V6 above 0.5 V4 after actuator round trip; clamped");
    v[1] = 0.5 * v[0];
  }
  return v;
}

inline void finish(ClosedLoopResult& r) {
  const auto& zf = r.trajectory.final_state();
  r.A_final = zf[kA];
  r.product_final = objective(zf);
  if (r.product_final > 0) r.r_G = ratio(zf);
}

inline Trajectory advance_plant(const SurrogateModel& model, const Plant& plant, const ExtracellularState& z,
                                double t, double dt, const Eigen::Vector2d& v, const MpcConfig& cfg) {
  ControlSchedule seg;
  seg.t_grid = {t, t + dt};
  seg.v_max = cfg.v_max;
  seg.values.resize(1, 2);
  seg.values.row(0) = v.transpose();
  return simulate(model, z, seg, plant.kin, cfg.integ);
}

}  // namespace detail

/// Closed loop against `plant`, whose initial-state transform is applied to cfg.z0.
inline ClosedLoopResult run_mpc(const SurrogateModel& model, const Plant& plant, const MpcConfig& cfg,
                                const OcOptions& ocp_opts = {}) {
  cfg.validate();
  const int N = cfg.steps();
  ClosedLoopResult res;
  ExtracellularState z = plant.transform_initial(cfg.z0);
  std::optional<Eigen::MatrixXd> previous;  // last decision, (V4, s) rows
  for (int k = 0; k < N; ++k) {
    const double t_k = k == 0 ? cfg.t0 : cfg.t0 + k * cfg.sampling;
    const OcProblem p = cfg.problem(model, t_k, z);
    OcOptions o = ocp_opts;
    std::optional<Eigen::MatrixXd> shifted;
    if (previous && previous->rows() > 1) shifted = previous->bottomRows(previous->rows() - 1).eval();
    o.warm_start = cfg.warm_start ? shifted : std::nullopt;
    const OcSolution sol = solve_ocp(p, o);

    MpcStep step;
    step.t_k = t_k;
    step.horizon_intervals = p.intervals();
    step.solve_iters = sol.iterations;
    step.converged = sol.converged;
    step.J_pred = sol.J;
    Eigen::MatrixXd decision = sol.decision;
    if (!sol.converged && shifted) {
      decision = *shifted;  // keep the previous plan's move
      step.warnings.push_back("optimizer did not converge; applied the shifted previous move");
    }
    const Eigen::Vector2d v_cmd = schedule_from_decision(p, decision).values.row(0).transpose();
    step.v_cmd = v_cmd;
    step.u = cfg.actuator.to_input(v_cmd);
    step.v_applied = detail::enforce_coupling(cfg.actuator.from_input(step.u, &step.warnings), step.warnings);
    previous = decision;

    const Trajectory seg = detail::advance_plant(model, plant, z, t_k, cfg.sampling, step.v_applied, cfg);
    detail::append_segment(res.trajectory, seg);
    z = seg.final_state();
    res.steps.push_back(std::move(step));
  }
  detail::finish(res);
  return res;
}

inline ClosedLoopResult run_mpc(const SurrogateModel& model, const MpcConfig& cfg, const OcOptions& ocp_opts = {}) {
  return run_mpc(model, make_plant(cfg.kin, cfg.mismatch), cfg, ocp_opts);
}

/// Applies a fixed schedule (e.g. the nominal open-loop optimum) to the plant.
inline ClosedLoopResult compare_open_loop(const SurrogateModel& model, const Plant& plant,
                                          const ControlSchedule& schedule, const MpcConfig& cfg) {
  cfg.validate();
  schedule.validate();
  ClosedLoopResult res;
  res.trajectory = simulate(model, plant.transform_initial(cfg.z0), schedule, plant.kin, cfg.integ);
  for (int k = 0; k < schedule.intervals(); ++k) {
    MpcStep s;
    s.t_k = schedule.t_grid[static_cast<std::size_t>(k)];
    s.v_cmd = schedule.values.row(k).transpose();
    s.u = cfg.actuator.to_input(s.v_cmd);
    s.v_applied = s.v_cmd;
    s.horizon_intervals = schedule.intervals() - k;
    res.steps.push_back(s);
  }
  detail::finish(res);
  return res;
}

/// Nominal open-loop optimum on the MPC sampling grid from the nominal initial state.
inline OcSolution nominal_open_loop(const SurrogateModel& model, const MpcConfig& cfg, const OcOptions& opts = {}) {
  cfg.validate();
  return solve_ocp(cfg.problem(model, cfg.t0, cfg.z0), opts);
}

inline void write_mpc_steps_csv(const ClosedLoopResult& r, std::ostream& os) {
  write_csv_header(os, {"t_k", "V4_cmd", "V6_cmd", "u1", "u2", "J_pred", "solve_iters", "converged"});
  for (const auto& s : r.steps)
    write_csv_row(os, {s.t_k, s.v_cmd[0], s.v_cmd[1], s.u[0], s.u[1], s.J_pred, static_cast<double>(s.solve_iters),
                       s.converged ? 1.0 : 0.0});
}

inline nlohmann::json closed_loop_summary(const ClosedLoopResult& r) {
  nlohmann::json j;
  j["A_ext_final"] = r.A_final;
  j["F_plus_G_final"] = r.product_final;
  j["r_G"] = std::isfinite(r.r_G) ? nlohmann::json(r.r_G) : nlohmann::json(nullptr);
  int nonconv = 0;
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& s : r.steps) {
    nonconv += s.converged ? 0 : 1;
    for (const auto& w : s.warnings) warnings.push_back({{"t_k", s.t_k}, {"message", w}});
  }
  j["steps"] = r.steps.size();
  j["nonconverged_steps"] = nonconv;
  j["warnings"] = warnings;
  return j;
}

}  // namespace fluxctl
