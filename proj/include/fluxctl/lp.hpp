#pragma once

/**
 * @file
 * @brief Dense bounded-variable primal simplex.
 *
 * Solves   max c'x  s.t.  A x = b,  lower <= x <= upper
 * with a two-phase tableau method. Nonbasic variables sit at either bound,
 * so box constraints never become rows. Pivot selection follows Bland's rule
 * (lowest eligible index for both entering and leaving), which rules out
 * cycling on the heavily degenerate problems flux balance produces.
 */

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace fluxctl {

struct LinearProgram {
  Eigen::VectorXd objective;  ///< maximized
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::VectorXd lower;  ///< may contain -inf
  Eigen::VectorXd upper;  ///< may contain +inf

  Eigen::Index num_vars() const { return objective.size(); }
  Eigen::Index num_rows() const { return eq_matrix.rows(); }

  void validate() const {
    const auto n = num_vars();
    if (eq_matrix.cols() != n || lower.size() != n || upper.size() != n || eq_rhs.size() != eq_matrix.rows())
      throw ValidationError("linear program: inconsistent dimensions");
    for (Eigen::Index j = 0; j < n; ++j)
      if (!(lower[j] <= upper[j]) || lower[j] == std::numeric_limits<double>::infinity() ||
          upper[j] == -std::numeric_limits<double>::infinity())
        throw ValidationError("linear program: invalid bounds on variable " + std::to_string(j));
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
  }
  return "unknown";
}

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd x;
  double objective_value = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

struct LpTolerances {
  double feas_tol = 1e-9;
  double opt_tol = 1e-9;
  int max_iterations = 20000;
};

/// Raised when the pivot budget is exhausted. Carries the last feasible point
/// (empty if phase 1 never finished).
class LpIterationLimit : public NumericalError {
 public:
  LpIterationLimit(const std::string& what, Eigen::VectorXd best)
      : NumericalError(what), best_point(std::move(best)) {}
  Eigen::VectorXd best_point;
};

namespace detail {

// Standard-form column: x_orig = offset + sign * y, y in [0, ub].
// Free variables are split into two columns with opposite signs.
struct ColumnMap {
  int orig;
  double sign;
};

class BoundedSimplex {
 public:
  BoundedSimplex(const LinearProgram& lp, const LpTolerances& tol) : lp_(lp), tol_(tol) {
    const auto n = lp.num_vars();
    const auto m = lp.num_rows();
    offset_ = Eigen::VectorXd::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double lo = lp.lower[j], hi = lp.upper[j];
      if (std::isfinite(lo)) {
        offset_[j] = lo;
        cols_.push_back({static_cast<int>(j), 1.0});
        ub_.push_back(hi - lo);  // +inf stays +inf
      } else if (std::isfinite(hi)) {
        offset_[j] = hi;
        cols_.push_back({static_cast<int>(j), -1.0});
        ub_.push_back(kInfinity);
      } else {
        cols_.push_back({static_cast<int>(j), 1.0});
        ub_.push_back(kInfinity);
        cols_.push_back({static_cast<int>(j), -1.0});
        ub_.push_back(kInfinity);
      }
    }
    num_struct_ = static_cast<int>(cols_.size());
    A_ = Eigen::MatrixXd::Zero(m, num_struct_);
    for (int k = 0; k < num_struct_; ++k) A_.col(k) = cols_[k].sign * lp.eq_matrix.col(cols_[k].orig);
    b_ = lp.eq_rhs - lp.eq_matrix * offset_;
    cost_ = Eigen::VectorXd::Zero(num_struct_);
    for (int k = 0; k < num_struct_; ++k) cost_[k] = -cols_[k].sign * lp.objective[cols_[k].orig];
    rhs_scale_ = std::max(1.0, b_.size() ? b_.cwiseAbs().maxCoeff() : 0.0);
  }

  LpSolution run() {
    const int m = static_cast<int>(A_.rows());
    const int n = num_struct_;
    // Phase 1 tableau: [A | I] with rows sign-normalized so b >= 0.
    T_ = Eigen::MatrixXd::Zero(m, n + m);
    xB_ = b_;
    for (int i = 0; i < m; ++i) {
      const double s = b_[i] < 0 ? -1.0 : 1.0;
      T_.row(i).head(n) = s * A_.row(i);
      T_(i, n + i) = 1.0;
      xB_[i] *= s;
    }
    ub_.resize(n + m, kInfinity);
    at_upper_.assign(n + m, false);
    basis_.resize(m);
    for (int i = 0; i < m; ++i) basis_[i] = n + i;
    active_rows_.assign(m, true);

    Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n + m);
    phase1_cost.tail(m).setOnes();
    LpStatus st = iterate(phase1_cost, n + m, /*phase=*/1);
    (void)st;  // phase 1 is bounded below by 0
    double infeas = 0.0;
    for (int i = 0; i < m; ++i)
      if (basis_[i] >= n) infeas = std::max(infeas, std::abs(xB_[i]));
    LpSolution sol;
    sol.iterations = iterations_;
    if (infeas > tol_.feas_tol * rhs_scale_) {
      sol.status = LpStatus::Infeasible;
      return sol;
    }
    drive_out_artificials(n);

    Eigen::VectorXd phase2_cost = Eigen::VectorXd::Zero(n + m);
    phase2_cost.head(n) = cost_;
    st = iterate(phase2_cost, n, /*phase=*/2);
    sol.iterations = iterations_;
    if (st == LpStatus::Unbounded) {
      sol.status = LpStatus::Unbounded;
      sol.x = current_point();
      return sol;
    }
    refine_basic_values();
    sol.status = LpStatus::Optimal;
    sol.x = current_point();
    sol.objective_value = lp_.objective.dot(sol.x);
    return sol;
  }

 private:
  static constexpr double kInfinity = std::numeric_limits<double>::infinity();
  static constexpr double kPivotTol = 1e-11;

  bool is_basic(int j) const {
    for (int b : basis_)
      if (b == j) return true;
    return false;
  }

  double nonbasic_value(int j) const { return at_upper_[j] ? ub_[j] : 0.0; }

  /// Runs simplex iterations minimizing cost over columns [0, ncols).
  LpStatus iterate(const Eigen::VectorXd& cost, int ncols, int phase) {
    const int m = static_cast<int>(T_.rows());
    std::vector<char> basic(T_.cols(), 0);
    for (;;) {
      std::fill(basic.begin(), basic.end(), 0);
      for (int i = 0; i < m; ++i)
        if (active_rows_[i]) basic[basis_[i]] = 1;

      // Bland: first improvable column.
      int enter = -1;
      double dir = 0.0;
      for (int j = 0; j < ncols; ++j) {
        if (basic[j] || ub_[j] == 0.0) continue;
        double d = cost[j];
        for (int i = 0; i < m; ++i)
          if (active_rows_[i]) d -= cost[basis_[i]] * T_(i, j);
        if (!at_upper_[j] && d < -tol_.opt_tol) {
          enter = j, dir = 1.0;
          break;
        }
        if (at_upper_[j] && d > tol_.opt_tol) {
          enter = j, dir = -1.0;
          break;
        }
      }
      if (enter < 0) return LpStatus::Optimal;

      if (++iterations_ > tol_.max_iterations) {
        Eigen::VectorXd best;
        if (phase == 2) best = current_point();
        throw LpIterationLimit("simplex iteration limit reached", best);
      }

      // Ratio test; ties go to the lowest basic variable index.
      double theta = ub_[enter];
      int leave_row = -1;
      int leave_var = std::numeric_limits<int>::max();
      for (int i = 0; i < m; ++i) {
        if (!active_rows_[i]) continue;
        const double alpha = dir * T_(i, enter);
        double limit;
        if (alpha > kPivotTol) {
          limit = std::max(0.0, xB_[i]) / alpha;
        } else if (alpha < -kPivotTol && std::isfinite(ub_[basis_[i]])) {
          limit = std::max(0.0, ub_[basis_[i]] - xB_[i]) / (-alpha);
        } else {
          continue;
        }
        if (limit < theta || (limit == theta && leave_row >= 0 && basis_[i] < leave_var)) {
          theta = limit;
          leave_row = i;
          leave_var = basis_[i];
        }
      }
      if (!std::isfinite(theta)) return LpStatus::Unbounded;

      for (int i = 0; i < m; ++i)
        if (active_rows_[i]) xB_[i] -= dir * theta * T_(i, enter);
      const double entering_value = nonbasic_value(enter) + dir * theta;

      if (leave_row < 0) {  // bound flip
        at_upper_[enter] = !at_upper_[enter];
        continue;
      }
      const int leaving = basis_[leave_row];
      const double alpha = dir * T_(leave_row, enter);
      at_upper_[leaving] = alpha < 0;
      pivot(leave_row, enter);
      xB_[leave_row] = entering_value;
      at_upper_[enter] = false;
    }
  }

  void pivot(int row, int col) {
    const double p = T_(row, col);
    T_.row(row) /= p;
    for (int i = 0; i < T_.rows(); ++i) {
      if (i == row || !active_rows_[i]) continue;
      const double f = T_(i, col);
      if (f != 0.0) T_.row(i) -= f * T_.row(row);
    }
    basis_[row] = col;
  }

  void drive_out_artificials(int n) {
    const int m = static_cast<int>(T_.rows());
    for (int i = 0; i < m; ++i) {
      if (!active_rows_[i] || basis_[i] < n) continue;
      int best = -1;
      double best_abs = 1e-9;
      for (int j = 0; j < n; ++j) {
        if (is_basic(j)) continue;
        if (std::abs(T_(i, j)) > best_abs) best_abs = std::abs(T_(i, j)), best = j;
      }
      if (best < 0) {
        active_rows_[i] = false;  // redundant equality
        continue;
      }
      const double value = nonbasic_value(best);
      pivot(i, best);
      xB_[i] = value;
      // Degenerate pivot: artificial was at ~0, other basics unchanged.
      at_upper_[best] = false;
    }
  }

  /// Recomputes basic values from the original equations to shed tableau drift.
  void refine_basic_values() {
    const int m = static_cast<int>(T_.rows());
    std::vector<int> rows, bcols;
    for (int i = 0; i < m; ++i)
      if (active_rows_[i]) rows.push_back(i), bcols.push_back(basis_[i]);
    if (rows.empty()) return;
    const int k = static_cast<int>(rows.size());
    Eigen::VectorXd rhs = b_;
    std::vector<char> basic(num_struct_, 0);
    for (int c : bcols) basic[c] = 1;
    for (int j = 0; j < num_struct_; ++j)
      if (!basic[j]) {
        const double v = nonbasic_value(j);
        if (v != 0.0) rhs -= v * A_.col(j);
      }
    Eigen::MatrixXd B(A_.rows(), k);
    for (int c = 0; c < k; ++c) B.col(c) = A_.col(bcols[c]);
    Eigen::VectorXd y = B.colPivHouseholderQr().solve(rhs);
    if (!y.allFinite()) return;
    if ((B * y - rhs).cwiseAbs().maxCoeff() > 1e-6 * rhs_scale_) return;
    // Snap roundoff-level values onto the bound they are degenerate at.
    const double snap = 64 * std::numeric_limits<double>::epsilon() * rhs_scale_;
    for (int c = 0; c < k; ++c) {
      double v = y[c];
      if (std::abs(v) <= snap) v = 0.0;
      const double hi = ub_[bcols[c]];
      if (std::isfinite(hi) && std::abs(v - hi) <= snap) v = hi;
      xB_[rows[c]] = v;
    }
  }

  Eigen::VectorXd current_point() const {
    Eigen::VectorXd y(num_struct_);
    for (int j = 0; j < num_struct_; ++j) y[j] = nonbasic_value(j);
    for (int i = 0; i < T_.rows(); ++i)
      if (active_rows_[i] && basis_[i] < num_struct_) y[basis_[i]] = xB_[i];
    Eigen::VectorXd x = offset_;
    for (int k = 0; k < num_struct_; ++k) x[cols_[k].orig] += cols_[k].sign * y[k];
    return x;
  }

  const LinearProgram& lp_;
  LpTolerances tol_;
  std::vector<ColumnMap> cols_;
  std::vector<double> ub_;
  Eigen::VectorXd offset_;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
  Eigen::VectorXd cost_;
  double rhs_scale_ = 1.0;
  int num_struct_ = 0;

  Eigen::MatrixXd T_;
  Eigen::VectorXd xB_;
  std::vector<int> basis_;
  std::vector<bool> at_upper_;
  std::vector<bool> active_rows_;
  int iterations_ = 0;
};

}  // namespace detail

/// Solves the LP. Infeasible and Unbounded are returned as status, not thrown.
inline LpSolution solve_lp(const LinearProgram& lp, const LpTolerances& tol = {}) {
  lp.validate();
  detail::BoundedSimplex simplex(lp, tol);
  return simplex.run();
}

/**
 * Two-stage solve: optimize the primary objective, then minimize
 * `secondary' x` over { x feasible : c'x >= primary optimum - opt_tol }.
 * The returned objective_value is always the primary objective at x.
 */
inline LpSolution solve_lexicographic(const LinearProgram& lp, const Eigen::VectorXd& secondary,
                                      const LpTolerances& tol = {}) {
  LpSolution primary = solve_lp(lp, tol);
  if (primary.status != LpStatus::Optimal) return primary;
  if (secondary.size() != lp.num_vars())
    throw ValidationError("secondary objective has wrong dimension");
  if (secondary.cwiseAbs().maxCoeff() == 0.0) return primary;

  const auto n = lp.num_vars();
  const auto m = lp.num_rows();
  LinearProgram stage2;
  stage2.objective = Eigen::VectorXd::Zero(n + 1);
  stage2.objective.head(n) = -secondary;
  stage2.eq_matrix = Eigen::MatrixXd::Zero(m + 1, n + 1);
  stage2.eq_matrix.topLeftCorner(m, n) = lp.eq_matrix;
  stage2.eq_matrix.block(m, 0, 1, n) = lp.objective.transpose();
  stage2.eq_matrix(m, n) = -1.0;  // c'x - s = z* - opt_tol, s >= 0
  stage2.eq_rhs = Eigen::VectorXd(m + 1);
  stage2.eq_rhs.head(m) = lp.eq_rhs;
  stage2.eq_rhs[m] = primary.objective_value - tol.opt_tol;
  stage2.lower = Eigen::VectorXd(n + 1);
  stage2.upper = Eigen::VectorXd(n + 1);
  stage2.lower.head(n) = lp.lower;
  stage2.upper.head(n) = lp.upper;
  stage2.lower[n] = 0.0;
  stage2.upper[n] = std::numeric_limits<double>::infinity();

  LpSolution second = solve_lp(stage2, tol);
  if (second.status != LpStatus::Optimal) return primary;  // numerically lost the face
  LpSolution out;
  out.status = LpStatus::Optimal;
  out.x = second.x.head(n);
  out.objective_value = lp.objective.dot(out.x);
  out.iterations = primary.iterations + second.iterations;
  return out;
}

}  // namespace fluxctl
