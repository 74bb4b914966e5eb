#pragma once

/**
 * @file
 * @brief Hybrid batch-process model: extracellular mass balances driven by
 * surrogate exchange rates scaled by Monod substrate limitation.
 *
 *   dz/dt = Bio * sign .* q,   q = max(f_NN(v_man), 0) * rate_scale * A/(A + k_A)
 *
 * with z = [A_ext, D_ext, F_ext, G_ext, Bio] and sign = [-1, +1, +1, +1, +1]
 * (uptake is reported positive). Integration is fixed-step classical RK4;
 * states are clamped at zero after every step.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "format.hpp"
#include "surrogate.hpp"

namespace fluxctl {

inline constexpr int kNumStates = 5;
inline constexpr int kNumControls = 2;

/// Extracellular state [A_ext, D_ext, F_ext, G_ext, Bio] in mmol/L (Bio in g/L).
using ExtracellularState = Eigen::Matrix<double, kNumStates, 1>;
enum StateIndex : int { kA = 0, kD = 1, kF = 2, kG = 3, kBio = 4 };

using RateVector = Eigen::Matrix<double, kNumStates, 1>;
using RateJacobian = Eigen::Matrix<double, kNumStates, kNumControls>;

inline const RateVector& rate_signs() {
  static const RateVector s = (RateVector() << -1, 1, 1, 1, 1).finished();
  return s;
}

struct KineticParams {
  double k_A = 0.04;        ///< substrate affinity, mmol/L
  double rate_scale = 1.0;  ///< plant mismatch multiplier on h

  void validate() const {
    if (!(k_A > 0)) throw ValidationError("kinetics: k_A must be positive");
    if (!(rate_scale > 0 && rate_scale <= 1)) throw ValidationError("kinetics: rate_scale must lie in (0, 1]");
  }

  /// Monod factor (including rate_scale) and its derivative in A.
  double limitation(double a, double* dh_da = nullptr) const {
    if (a <= 0.0) {
      if (dh_da) *dh_da = 0.0;
      return 0.0;
    }
    const double den = a + k_A;
    if (dh_da) *dh_da = rate_scale * k_A / (den * den);
    return rate_scale * a / den;
  }
};

/// Piecewise-constant manipulated fluxes: row k holds (V4, V6) on [t_k, t_{k+1}).
struct ControlSchedule {
  std::vector<double> t_grid;
  Eigen::MatrixXd values;  ///< intervals x 2
  double v_max = 10.0;

  int intervals() const { return static_cast<int>(values.rows()); }

  static ControlSchedule uniform(double t0, double tf, int intervals, double v4 = 0.0, double v6 = 0.0) {
    ControlSchedule s;
    for (int k = 0; k <= intervals; ++k)
      s.t_grid.push_back(k == intervals ? tf : t0 + (tf - t0) * k / intervals);
    s.values.resize(intervals, 2);
    s.values.col(0).setConstant(v4);
    s.values.col(1).setConstant(v6);
    return s;
  }

  void validate() const {
    if (values.cols() != 2) throw ValidationError("schedule: expected two manipulated fluxes per interval");
    if (static_cast<int>(t_grid.size()) != intervals() + 1 || intervals() == 0)
      throw ValidationError("schedule: time grid must have one more point than intervals");
    for (std::size_t k = 1; k < t_grid.size(); ++k)
      if (!(t_grid[k] > t_grid[k - 1])) throw ValidationError("schedule: time grid must be strictly increasing");
    for (int k = 0; k < intervals(); ++k) {
      const double v4 = values(k, 0), v6 = values(k, 1);
      if (!(v4 >= 0 && v4 <= v_max))
        throw ValidationError("schedule: V4 outside [0, v_max] on interval " + std::to_string(k));
      if (!(v6 >= 0 && v6 <= 0.5 * v4))
        throw ValidationError("schedule: V6 outside [0, 0.5 V4] on interval " + std::to_string(k));
    }
  }

  /// Control active at time t (last interval extends to the end).
  Eigen::Vector2d at(double t) const {
    int k = 0;
    while (k + 1 < intervals() && t >= t_grid[static_cast<std::size_t>(k + 1)]) ++k;
    return values.row(k).transpose();
  }
};

struct IntegratorOptions {
  double max_step = 0.01;  ///< h
};

struct Trajectory {
  std::vector<double> times;
  std::vector<ExtracellularState> states;
  std::vector<Eigen::Vector2d> controls;  ///< applied (V4, V6) at each time
  std::vector<RateVector> rates;          ///< realized q at each time

  const ExtracellularState& final_state() const { return states.back(); }
};

inline constexpr double kClampSlopeBand = 1e-6;

/// Surrogate exchange fluxes clamped at zero (the state-independent part of q).
inline RateVector base_rates(const SurrogateModel& model, const Eigen::Vector2d& v_man, RateJacobian* jac = nullptr) {
  if (model.output_dim() < kNumStates)
    throw ValidationError("surrogate must predict at least (q_A, q_D, q_F, q_G, mu)");
  RateVector r;
  if (jac) {
    Eigen::MatrixXd J;
    const Eigen::VectorXd y = model.predict(v_man, J);
    r = y.head<kNumStates>();
    *jac = J.topRows<kNumStates>();
    for (int i = 0; i < kNumStates; ++i) {
      if (r[i] >= 0.0) continue;
      // Outputs that should be exactly zero on the edge of the admissible box come out at
      // noise level; keep the net's slope there so the derivative is the feasible-side one.
      if (r[i] < -kClampSlopeBand) jac->row(i).setZero();
      r[i] = 0.0;
    }
  } else {
    r = model.predict(v_man).head<kNumStates>().cwiseMax(0.0);
  }
  return r;
}

/// Biomass-specific exchange rates q at the given state.
inline RateVector rates(const SurrogateModel& model, const ExtracellularState& state, const Eigen::Vector2d& v_man,
                        const KineticParams& kin) {
  return base_rates(model, v_man) * kin.limitation(state[kA]);
}

namespace detail {

// One RK4 step of dz/dt = Bio * h(A) * c with c = sign .* r held constant.
inline ExtracellularState rk4_step(const ExtracellularState& z, const RateVector& c, const KineticParams& kin,
                                   double dt) {
  auto f = [&](const ExtracellularState& y) -> ExtracellularState { return y[kBio] * kin.limitation(y[kA]) * c; };
  const ExtracellularState k1 = f(z);
  const ExtracellularState k2 = f(z + 0.5 * dt * k1);
  const ExtracellularState k3 = f(z + 0.5 * dt * k2);
  const ExtracellularState k4 = f(z + dt * k3);
  return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline int substeps(double interval, double max_step) {
  return std::max(1, static_cast<int>(std::ceil(interval / max_step - 1e-9)));
}

inline constexpr int kMaxMicroSteps = 4096;

/**
 * Number of equal RK4 sub-steps for one grid step. Close to substrate
 * depletion the A-balance has eigenvalue -Bio q_A k_A / (A + k_A)^2, which can
 * reach 1e4 / h; sub-stepping keeps dt * |lambda| <= 2, where the RK4
 * amplification factor stays positive and A never undershoots zero.
 */
inline int micro_steps(const ExtracellularState& z, const RateVector& c, const KineticParams& kin, double dt) {
  const double uptake = std::max(-c[kA], 0.0) * kin.rate_scale * z[kBio];
  if (!(uptake > 0.0) || z[kA] == 0.0) return 1;  // at A = 0 every rate vanishes
  const double a_lo = std::max(z[kA] - dt * uptake, 0.0);
  const double lambda = uptake * kin.k_A / ((a_lo + kin.k_A) * (a_lo + kin.k_A));
  const double n = std::ceil(dt * lambda / 2.0);
  if (!(n < kMaxMicroSteps)) return kMaxMicroSteps;
  return std::max(1, static_cast<int>(n));
}

// Advances one grid step; `trace` (if given) receives (state, dt) before each micro-step.
inline ExtracellularState advance(ExtracellularState z, const RateVector& c, const KineticParams& kin, double dt,
                                  std::vector<std::pair<ExtracellularState, double>>* trace = nullptr) {
  const int n = micro_steps(z, c, kin, dt);
  const double h = dt / n;
  for (int i = 0; i < n; ++i) {
    if (trace) trace->emplace_back(z, h);
    z = rk4_step(z, c, kin, h).cwiseMax(0.0);
  }
  return z;
}

inline void check_finite(const ExtracellularState& z, double t) {
  if (!z.allFinite()) throw NumericalError("simulation: non-finite state at t = " + format_double(t));
}

}  // namespace detail

/// Integrates the schedule from z0 and records the state at every grid step.
inline Trajectory simulate(const SurrogateModel& model, const ExtracellularState& z0, const ControlSchedule& schedule,
                           const KineticParams& kin, const IntegratorOptions& integ = {}) {
  schedule.validate();
  kin.validate();
  if ((z0.array() < 0).any() || !z0.allFinite()) throw ValidationError("simulate: initial state must be finite and >= 0");
  Trajectory tr;
  ExtracellularState z = z0;
  Eigen::Vector2d v = schedule.values.row(0).transpose();
  for (int k = 0; k < schedule.intervals(); ++k) {
    v = schedule.values.row(k).transpose();
    const RateVector r = base_rates(model, v);
    const RateVector c = rate_signs().cwiseProduct(r);
    const double t_start = schedule.t_grid[static_cast<std::size_t>(k)];
    const double span = schedule.t_grid[static_cast<std::size_t>(k + 1)] - t_start;
    const int n = detail::substeps(span, integ.max_step);
    const double dt = span / n;
    for (int s = 0; s < n; ++s) {
      const double t = t_start + s * dt;
      tr.times.push_back(t);
      tr.states.push_back(z);
      tr.controls.push_back(v);
      tr.rates.push_back(r * kin.limitation(z[kA]));
      z = detail::advance(z, c, kin, dt);
      detail::check_finite(z, t + dt);
    }
  }
  tr.times.push_back(schedule.t_grid.back());
  tr.states.push_back(z);
  tr.controls.push_back(v);
  tr.rates.push_back(base_rates(model, v) * kin.limitation(z[kA]));
  return tr;
}

/**
 * Final state of the schedule and, optionally, its exact derivative with
 * respect to every (V4_k, V6_k): a 5 x (2 * intervals) matrix whose column
 * 2k is d z(t_f) / d V4_k and 2k+1 is d z(t_f) / d V6_k. The derivative is
 * that of the discrete integration map (reverse mode through every RK4
 * micro-step; clamped components and sub-step counts are held fixed).
 */
inline ExtracellularState propagate(const SurrogateModel& model, const ExtracellularState& z0,
                                    const ControlSchedule& schedule, const KineticParams& kin,
                                    const IntegratorOptions& integ, Eigen::MatrixXd* dzf_dv = nullptr) {
  const int K = schedule.intervals();
  struct IntervalData {
    RateVector c;
    RateJacobian dc_dv;
    std::size_t first, last;  // range in `trace`
  };
  std::vector<IntervalData> iv(static_cast<std::size_t>(K));
  std::vector<std::pair<ExtracellularState, double>> trace;
  auto* tp = dzf_dv ? &trace : nullptr;
  ExtracellularState z = z0;
  for (int k = 0; k < K; ++k) {
    auto& d = iv[static_cast<std::size_t>(k)];
    RateJacobian jac;
    const RateVector r = base_rates(model, schedule.values.row(k).transpose(), dzf_dv ? &jac : nullptr);
    d.c = rate_signs().cwiseProduct(r);
    if (dzf_dv) d.dc_dv = rate_signs().asDiagonal() * jac;
    const double span = schedule.t_grid[static_cast<std::size_t>(k + 1)] - schedule.t_grid[static_cast<std::size_t>(k)];
    const int n = detail::substeps(span, integ.max_step);
    d.first = trace.size();
    for (int s = 0; s < n; ++s) z = detail::advance(z, d.c, kin, span / n, tp);
    d.last = trace.size();
    detail::check_finite(z, schedule.t_grid[static_cast<std::size_t>(k + 1)]);
  }
  if (!dzf_dv) return z;

  // Reverse pass. Row i of `lam` is the adjoint of final-state component i.
  using Mat5 = Eigen::Matrix<double, kNumStates, kNumStates>;
  using Row5 = Eigen::Matrix<double, 1, kNumStates>;
  dzf_dv->setZero(kNumStates, 2 * K);
  Mat5 lam = Mat5::Identity();
  auto g = [&](const ExtracellularState& y, Row5& grad) {
    double dh = 0.0;
    const double h = kin.limitation(y[kA], &dh);
    grad.setZero();
    grad[kA] = y[kBio] * dh;
    grad[kBio] = h;
    return y[kBio] * h;
  };
  for (int k = K - 1; k >= 0; --k) {
    const auto& d = iv[static_cast<std::size_t>(k)];
    Mat5 cbar = Mat5::Zero();  // d z(t_f) / d c over this interval
    for (std::size_t s = d.last; s-- > d.first;) {
      const auto& [y1, dt] = trace[s];
      Row5 g1, g2, g3, g4;
      const double s1 = g(y1, g1);
      const ExtracellularState k1 = s1 * d.c;
      const ExtracellularState y2 = y1 + 0.5 * dt * k1;
      const double s2 = g(y2, g2);
      const ExtracellularState k2 = s2 * d.c;
      const ExtracellularState y3 = y1 + 0.5 * dt * k2;
      const double s3 = g(y3, g3);
      const ExtracellularState k3 = s3 * d.c;
      const ExtracellularState y4 = y1 + dt * k3;
      const double s4 = g(y4, g4);
      const ExtracellularState k4 = s4 * d.c;
      const ExtracellularState out = y1 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      for (int i = 0; i < kNumStates; ++i)
        if (out[i] < 0.0) lam.col(i).setZero();  // clamped component

      // k_j = s_j c with s_j = g(y_j): d k_j / d y_j = c g_j', d k_j / d c = s_j I
      Mat5 a4 = dt / 6.0 * lam;
      Mat5 a3 = dt / 3.0 * lam;
      Mat5 a2 = dt / 3.0 * lam;
      Mat5 a1 = dt / 6.0 * lam;
      Mat5 zbar = lam;
      Mat5 ybar = (a4 * d.c) * g4;
      cbar += s4 * a4;
      zbar += ybar;
      a3 += dt * ybar;
      ybar = (a3 * d.c) * g3;
      cbar += s3 * a3;
      zbar += ybar;
      a2 += 0.5 * dt * ybar;
      ybar = (a2 * d.c) * g2;
      cbar += s2 * a2;
      zbar += ybar;
      a1 += 0.5 * dt * ybar;
      ybar = (a1 * d.c) * g1;
      cbar += s1 * a1;
      zbar += ybar;
      lam = zbar;
    }
    dzf_dv->middleCols(2 * k, 2) = cbar * d.dc_dv;
  }
  return z;
}

struct Plant {
  KineticParams kin;
  double bio_factor = 1.0;

  ExtracellularState transform_initial(ExtracellularState z0) const {
    z0[kBio] *= bio_factor;
    return z0;
  }
};

/// Mismatched plant: h and the initial biomass are both scaled by `factor`.
inline Plant make_plant(const KineticParams& nominal, double factor) {
  if (!(factor > 0 && factor <= 1)) throw ValidationError("make_plant: mismatch factor must lie in (0, 1]");
  Plant p;
  p.kin = nominal;
  p.kin.rate_scale = nominal.rate_scale * factor;
  p.bio_factor = factor;
  return p;
}

/// Total extracellular carbon: A + D + F + G + 2 Bio (mmol-C/L).
inline double carbon_total(const ExtracellularState& z) { return z[kA] + z[kD] + z[kF] + z[kG] + 2.0 * z[kBio]; }

inline void write_trajectory_csv(const Trajectory& tr, std::ostream& os) {
  write_csv_header(os, {"t", "A_ext", "D_ext", "F_ext", "G_ext", "Bio", "V4", "V6", "q_A", "q_D", "q_F", "q_G", "mu"});
  std::vector<double> row(13);
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    row[0] = tr.times[i];
    for (int j = 0; j < kNumStates; ++j) row[static_cast<std::size_t>(1 + j)] = tr.states[i][j];
    row[6] = tr.controls[i][0];
    row[7] = tr.controls[i][1];
    for (int j = 0; j < kNumStates; ++j) row[static_cast<std::size_t>(8 + j)] = tr.rates[i][j];
    write_csv_row(os, row);
  }
}

inline void save_trajectory(const Trajectory& tr, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  write_trajectory_csv(tr, os);
}

}  // namespace fluxctl
