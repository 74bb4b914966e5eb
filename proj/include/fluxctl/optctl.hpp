#pragma once

/**
 * @file
 * @brief Open-loop dynamic optimization of the manipulated fluxes.
 *
 * Direct single shooting on a uniform control grid. Per interval the
 * decision variables are (V4_k, s_k) with V6_k = s_k * 0.5 * V4_k, so the
 * coupled bound 0 <= V6 <= 0.5 V4 becomes the box [0, v_max] x [0, 1].
 * The terminal ratio constraint G/(F+G) = r_G is handled by an augmented
 * Lagrangian around a projected L-BFGS inner solver; gradients are exact
 * derivatives of the discrete integration map.
 */

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bound_lbfgs.hpp"
#include "error.hpp"
#include "format.hpp"
#include "hybridsim.hpp"
#include "parallel.hpp"
#include "surrogate.hpp"

namespace fluxctl {

struct OcProblem {
  const SurrogateModel* model = nullptr;
  ExtracellularState z0 = (ExtracellularState() << 120, 0, 0, 0, 0.001).finished();
  double t0 = 0.0;
  double t_f = 9.0;
  double dt_control = 0.05;
  std::optional<double> r_G_target;
  double v_max = 10.0;
  KineticParams kin;
  IntegratorOptions integ;

  int intervals() const { return static_cast<int>(std::lround((t_f - t0) / dt_control)); }

  std::vector<double> time_grid() const {
    const int K = intervals();
    std::vector<double> t(static_cast<std::size_t>(K + 1));
    for (int k = 0; k <= K; ++k) t[static_cast<std::size_t>(k)] = k == K ? t_f : t0 + k * dt_control;
    return t;
  }

  void validate() const {
    if (!model) throw ValidationError("ocp: no surrogate model");
    if (!(t_f > t0)) throw ValidationError("ocp: t_f must exceed t0");
    if (!(dt_control > 0)) throw ValidationError("ocp: dt_control must be positive");
    const double n = (t_f - t0) / dt_control;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n) || intervals() < 1)
      throw ValidationError("ocp: dt_control must divide t_f - t0");
    if (!z0.allFinite() || (z0.array() < 0).any()) throw ValidationError("ocp: z0 must be finite and >= 0");
    if (r_G_target && !(*r_G_target >= 0 && *r_G_target <= 1))
      throw ValidationError("ocp: r_G_target must lie in [0, 1]");
    if (!(v_max > 0)) throw ValidationError("ocp: v_max must be positive");
    kin.validate();
    if (!(integ.max_step > 0)) throw ValidationError("ocp: integration step must be positive");
  }
};

struct OcOptions {
  int max_outer = 30;
  BoundLbfgsOptions inner;
  double rho0 = 10.0;
  double rho_max = 1e8;
  double constraint_tol = 1e-6;
  int restarts = 3;  ///< heuristic start plus restarts - 1 random starts
  std::uint64_t seed = 42;
  unsigned workers = 0;  ///< 0: FLUXCTL_THREADS or hardware concurrency
  std::optional<Eigen::MatrixXd> warm_start;  ///< intervals x 2 of (V4, s), tried first
};

struct OcSolution {
  ControlSchedule schedule;
  Eigen::MatrixXd decision;  ///< intervals x 2 of (V4, s)
  double J = 0.0;
  double r_G = std::numeric_limits<double>::quiet_NaN();
  double residual = 0.0;  ///< achieved r_G - target (0 without a target)
  int iterations = 0;
  bool converged = false;
  double multiplier = 0.0;
  double penalty = 0.0;
  int start_index = 0;
  ExtracellularState final_state;
};

/// Final product concentration F_ext + G_ext.
inline double objective(const ExtracellularState& zf) { return zf[kF] + zf[kG]; }
inline double objective(const Trajectory& tr) { return objective(tr.final_state()); }

/// Terminal product ratio G / (F + G).
inline double ratio(const ExtracellularState& zf) {
  const double total = zf[kF] + zf[kG];
  if (!(total > 0)) throw NumericalError("ratio undefined: zero total product");
  return zf[kG] / total;
}
inline double ratio(const Trajectory& tr) { return ratio(tr.final_state()); }

/// Schedule from a decision matrix of (V4, s) rows.
inline ControlSchedule schedule_from_decision(const OcProblem& p, const Eigen::MatrixXd& dec) {
  ControlSchedule s;
  s.t_grid = p.time_grid();
  s.v_max = p.v_max;
  s.values.resize(dec.rows(), 2);
  for (Eigen::Index k = 0; k < dec.rows(); ++k) {
    s.values(k, 0) = dec(k, 0);
    s.values(k, 1) = (0.5 * dec(k, 0)) * dec(k, 1);
  }
  return s;
}

/// Inverse of schedule_from_decision; s is taken as 0 where V4 = 0.
inline Eigen::MatrixXd decision_from_schedule(const ControlSchedule& s) {
  Eigen::MatrixXd dec(s.values.rows(), 2);
  for (Eigen::Index k = 0; k < dec.rows(); ++k) {
    dec(k, 0) = s.values(k, 0);
    dec(k, 1) = s.values(k, 0) > 0 ? std::clamp(s.values(k, 1) / (0.5 * s.values(k, 0)), 0.0, 1.0) : 0.0;
  }
  return dec;
}

/**
 * psi = -J / S + lambda c + rho / 2 c^2 with c = r_G - target and S the
 * initial total carbon (so psi is O(1)). Variables are the flattened
 * decision matrix (V4_0, s_0, V4_1, s_1, ...). When no product has formed
 * the ratio is taken as 0 with zero derivative.
 */
class PenalizedObjective {
 public:
  PenalizedObjective(const OcProblem& p, double lambda = 0.0, double rho = 0.0)
      : p_(p), lambda_(lambda), rho_(rho), scale_(std::max(1.0, carbon_total(p.z0))) {}

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const {
    const int K = p_.intervals();
    const Eigen::MatrixXd dec = Eigen::Map<const Eigen::MatrixXd>(x.data(), 2, K).transpose();
    const ControlSchedule sched = schedule_from_decision(p_, dec);
    Eigen::MatrixXd dz;
    last_state_ = propagate(*p_.model, p_.z0, sched, p_.kin, p_.integ, grad ? &dz : nullptr);
    const double F = last_state_[kF], G = last_state_[kG], total = F + G;
    Eigen::Matrix<double, 1, kNumStates> dpsi_dz = Eigen::Matrix<double, 1, kNumStates>::Zero();
    dpsi_dz[kF] = dpsi_dz[kG] = -1.0 / scale_;
    double psi = -total / scale_;
    last_c_ = 0.0;
    if (p_.r_G_target) {
      double r = 0.0;
      Eigen::Matrix<double, 1, kNumStates> dr = Eigen::Matrix<double, 1, kNumStates>::Zero();
      if (total > 0) {
        r = G / total;
        dr[kF] = -G / (total * total);
        dr[kG] = F / (total * total);
      }
      const double c = r - *p_.r_G_target;
      last_c_ = c;
      psi += lambda_ * c + 0.5 * rho_ * c * c;
      dpsi_dz += (lambda_ + rho_ * c) * dr;
    }
    if (grad) {
      const Eigen::RowVectorXd dv = dpsi_dz * dz;  // w.r.t. (V4_k, V6_k)
      grad->resize(2 * K);
      for (int k = 0; k < K; ++k) {
        const double v4 = dec(k, 0), s = dec(k, 1);
        const double d4 = dv[2 * k], d6 = dv[2 * k + 1];
        (*grad)[2 * k] = d4 + 0.5 * s * d6;
        (*grad)[2 * k + 1] = 0.5 * v4 * d6;
      }
    }
    return psi;
  }

  const ExtracellularState& last_state() const { return last_state_; }
  double last_constraint() const { return last_c_; }
  double scale() const { return scale_; }

 private:
  const OcProblem& p_;
  double lambda_, rho_, scale_;
  mutable ExtracellularState last_state_;
  mutable double last_c_ = 0.0;
};

inline Eigen::VectorXd flatten_decision(const Eigen::MatrixXd& dec) {
  const Eigen::MatrixXd t = dec.transpose();
  return Eigen::Map<const Eigen::VectorXd>(t.data(), t.size());
}

inline Eigen::MatrixXd unflatten_decision(const Eigen::VectorXd& x) {
  return Eigen::Map<const Eigen::MatrixXd>(x.data(), 2, x.size() / 2).transpose();
}

/**
 * Largest relative discrepancy between the analytic gradient of the
 * penalized objective and central differences (step 1e-6), measured
 * against the gradient's infinity norm. At a bound the difference is
 * one-sided into the feasible box. Returns 0 when both gradients vanish.
 */
inline double check_gradient(const OcProblem& p, const ControlSchedule& schedule, double lambda = 0.0,
                             double rho = 10.0, double step = 1e-6) {
  p.validate();
  const Eigen::VectorXd x = flatten_decision(decision_from_schedule(schedule));
  if (x.size() != 2 * p.intervals()) throw ValidationError("check_gradient: schedule does not match the control grid");
  const PenalizedObjective f(p, lambda, rho);
  Eigen::VectorXd g;
  f(x, &g);
  Eigen::VectorXd fd(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double hi = (i % 2 == 0) ? p.v_max : 1.0;
    Eigen::VectorXd xp = x, xm = x;
    if (x[i] + step > hi) {
      xm[i] -= step;
      fd[i] = (f(x) - f(xm)) / step;
    } else if (x[i] - step < 0.0) {
      xp[i] += step;
      fd[i] = (f(xp) - f(x)) / step;
    } else {
      xp[i] += step;
      xm[i] -= step;
      fd[i] = (f(xp) - f(xm)) / (2 * step);
    }
  }
  const double norm = std::max(g.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff());
  if (norm == 0.0) return 0.0;
  return (g - fd).cwiseAbs().maxCoeff() / norm;
}

/**
 * Two-stage start: V4 = a up to a switch interval and v_max afterwards, with
 * s at the ratio target. The switch and the first-stage level a (0 to 0.9
 * v_max) are chosen by simulation; on fine grids the best level is 0.
 */
inline Eigen::MatrixXd heuristic_start(const OcProblem& p) {
  const int K = p.intervals();
  const double s0 = p.r_G_target.value_or(0.5);
  Eigen::MatrixXd best, dec(K, 2);
  double best_j = -std::numeric_limits<double>::infinity();
  for (int level = 0; level < 10; ++level) {
    for (int sw = 0; sw <= K; ++sw) {
      if (level > 0 && sw == 0) continue;
      for (int k = 0; k < K; ++k) dec.row(k) << (k < sw ? 0.1 * level * p.v_max : p.v_max), s0;
      const double j = objective(propagate(*p.model, p.z0, schedule_from_decision(p, dec), p.kin, p.integ));
      if (j > best_j) best_j = j, best = dec;
    }
  }
  return best;
}

namespace detail {

inline OcSolution solve_from(const OcProblem& p, const OcOptions& opt, const Eigen::MatrixXd& start) {
  const int K = p.intervals();
  // Normalized variables y = (V4 / v_max, s) on the unit box.
  Eigen::VectorXd unit(2 * K);
  for (int k = 0; k < K; ++k) unit[2 * k] = p.v_max, unit[2 * k + 1] = 1.0;
  const Eigen::VectorXd lo = Eigen::VectorXd::Zero(2 * K), hi = Eigen::VectorXd::Ones(2 * K);
  Eigen::VectorXd y = project_box(flatten_decision(start).cwiseQuotient(unit), lo, hi);

  OcSolution sol;
  double lambda = 0.0, rho = p.r_G_target ? opt.rho0 : 0.0;
  double prev_c = std::numeric_limits<double>::infinity();
  bool stationary = false;
  double c = 0.0;
  for (int outer = 0; outer < std::max(1, opt.max_outer); ++outer) {
    const PenalizedObjective f(p, lambda, rho);
    auto fy = [&](const Eigen::VectorXd& yy, Eigen::VectorXd& gy) {
      const double v = f(yy.cwiseProduct(unit), &gy);
      gy = gy.cwiseProduct(unit);
      return v;
    };
    const BoundLbfgsResult r = minimize_bound_lbfgs(fy, y, lo, hi, opt.inner);
    y = r.x;
    sol.iterations += r.iterations;
    stationary = r.stationary();
    f(y.cwiseProduct(unit));
    c = f.last_constraint();
    if (!p.r_G_target) break;
    if (std::abs(c) <= opt.constraint_tol && stationary) break;
    lambda += rho * c;
    if (std::abs(c) > 0.25 * prev_c) rho = std::min(2.0 * rho, opt.rho_max);
    prev_c = std::abs(c);
  }
  sol.decision = unflatten_decision(y.cwiseProduct(unit));
  for (int k = 0; k < K; ++k) sol.decision(k, 1) = std::clamp(sol.decision(k, 1), 0.0, 1.0);
  sol.schedule = schedule_from_decision(p, sol.decision);
  sol.final_state = propagate(*p.model, p.z0, sol.schedule, p.kin, p.integ);
  sol.J = objective(sol.final_state);
  if (sol.J > 0) sol.r_G = ratio(sol.final_state);
  sol.residual = p.r_G_target ? (sol.J > 0 ? sol.r_G : 0.0) - *p.r_G_target : 0.0;
  sol.multiplier = lambda;
  sol.penalty = rho;
  sol.converged = stationary && std::abs(sol.residual) <= std::max(opt.constraint_tol, 1e-9);
  return sol;
}

}  // namespace detail

/**
 * Multi-start solve. Start 0 is the warm start when given, then the
 * two-stage heuristic, then seeded uniform random schedules. The best
 * feasible J wins; near-ties (within 1e-9 relative) go to the lowest index.
 */
inline OcSolution solve_ocp(const OcProblem& p, const OcOptions& opt = {}) {
  p.validate();
  const int K = p.intervals();
  std::vector<Eigen::MatrixXd> starts;
  if (opt.warm_start) {
    if (opt.warm_start->rows() != K || opt.warm_start->cols() != 2)
      throw ValidationError("ocp: warm start must have one (V4, s) row per interval");
    starts.push_back(*opt.warm_start);
  }
  starts.push_back(heuristic_start(p));
  for (int i = 1; i < opt.restarts; ++i) {
    Rng rng(opt.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(i));
    Eigen::MatrixXd dec(K, 2);
    for (int k = 0; k < K; ++k) {
      dec(k, 0) = p.v_max * rng.uniform();
      dec(k, 1) = rng.uniform();
    }
    starts.push_back(dec);
  }
  std::vector<OcSolution> sols(starts.size());
  parallel_for(
      starts.size(), [&](std::size_t i) { sols[i] = detail::solve_from(p, opt, starts[i]); },
      opt.workers ? opt.workers : worker_count());

  const double feas_tol = std::max(1e-4, opt.constraint_tol);
  auto feasible = [&](const OcSolution& s) { return std::abs(s.residual) <= feas_tol; };
  std::size_t best = 0;
  for (std::size_t i = 1; i < sols.size(); ++i) {
    const auto& a = sols[i];
    const auto& b = sols[best];
    if (feasible(a) != feasible(b)) {
      if (feasible(a)) best = i;
      continue;
    }
    const double tie = 1e-9 * std::max(1.0, std::abs(b.J));
    if (feasible(a) ? a.J > b.J + tie : std::abs(a.residual) < std::abs(b.residual)) best = i;
  }
  int total_iters = 0;
  for (const auto& s : sols) total_iters += s.iterations;
  OcSolution out = sols[best];
  out.start_index = static_cast<int>(best);
  out.iterations = total_iters;
  return out;
}

/// Time-average of V4 over [a, b].
inline double mean_v4(const ControlSchedule& s, double a, double b) {
  double acc = 0.0;
  for (int k = 0; k < s.intervals(); ++k) {
    const double lo = std::max(a, s.t_grid[static_cast<std::size_t>(k)]);
    const double hi = std::min(b, s.t_grid[static_cast<std::size_t>(k + 1)]);
    if (hi > lo) acc += (hi - lo) * s.values(k, 0);
  }
  return acc / (b - a);
}

inline void write_schedule_csv(const ControlSchedule& s, std::ostream& os) {
  write_csv_header(os, {"t_start", "t_end", "V4", "V6"});
  for (int k = 0; k < s.intervals(); ++k)
    write_csv_row(os, {s.t_grid[static_cast<std::size_t>(k)], s.t_grid[static_cast<std::size_t>(k + 1)],
                       s.values(k, 0), s.values(k, 1)});
}

inline nlohmann::json solution_summary(const OcProblem& p, const OcSolution& s) {
  nlohmann::json j;
  j["J"] = s.J;
  j["r_G"] = std::isfinite(s.r_G) ? nlohmann::json(s.r_G) : nlohmann::json(nullptr);
  j["r_G_target"] = p.r_G_target ? nlohmann::json(*p.r_G_target) : nlohmann::json(nullptr);
  j["residual"] = s.residual;
  j["converged"] = s.converged;
  j["iterations"] = s.iterations;
  j["start_index"] = s.start_index;
  j["intervals"] = p.intervals();
  j["dt_control"] = p.dt_control;
  j["final_state"] = {{"A_ext", s.final_state[kA]}, {"D_ext", s.final_state[kD]}, {"F_ext", s.final_state[kF]},
                      {"G_ext", s.final_state[kG]}, {"Bio", s.final_state[kBio]}};
  return j;
}

}  // namespace fluxctl
