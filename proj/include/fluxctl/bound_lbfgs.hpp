#pragma once

/**
 * @file
 * @brief Projected limited-memory BFGS for box-constrained minimization.
 *
 * Variables at a bound whose gradient points outward are frozen for the
 * iteration; the two-loop recursion runs on the remaining free subspace and
 * steps are projected back onto the box with an Armijo backtracking search.
 */

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <functional>
#include <vector>

namespace fluxctl {

struct BoundLbfgsOptions {
  int max_iterations = 300;
  int memory = 10;
  double pg_tol = 1e-7;     ///< infinity norm of the projected gradient
  double rel_f_tol = 1e-13; ///< relative decrease below which progress is considered stalled
  int stall_iterations = 3;
  double armijo = 1e-4;
  int max_backtracks = 40;
};

enum class LbfgsExit { Gradient, Stalled, LineSearch, IterationLimit };

struct BoundLbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double pg_norm = 0.0;
  int iterations = 0;
  LbfgsExit exit = LbfgsExit::IterationLimit;

  bool stationary() const { return exit == LbfgsExit::Gradient || exit == LbfgsExit::Stalled; }
};

/// f(x, grad) returns the objective and writes the gradient.
using BoundObjective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

inline double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                      const Eigen::VectorXd& hi) {
  return (project_box(x - g, lo, hi) - x).cwiseAbs().maxCoeff();
}

inline BoundLbfgsResult minimize_bound_lbfgs(const BoundObjective& f, Eigen::VectorXd x, const Eigen::VectorXd& lo,
                                             const Eigen::VectorXd& hi, const BoundLbfgsOptions& opt = {}) {
  const Eigen::Index n = x.size();
  x = project_box(x, lo, hi);
  Eigen::VectorXd g(n);
  double fx = f(x, g);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;
  BoundLbfgsResult res;
  int stalled = 0;

  for (int it = 0;; ++it) {
    res.iterations = it;
    const double pg = projected_gradient_norm(x, g, lo, hi);
    if (pg <= opt.pg_tol) {
      res.exit = LbfgsExit::Gradient;
      break;
    }
    if (it >= opt.max_iterations) {
      res.exit = LbfgsExit::IterationLimit;
      break;
    }

    Eigen::VectorXd free = Eigen::VectorXd::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i)
      if ((x[i] <= lo[i] && g[i] > 0) || (x[i] >= hi[i] && g[i] < 0)) free[i] = 0.0;

    // Two-loop recursion on the free subspace.
    Eigen::VectorXd q = g.cwiseProduct(free);
    std::vector<double> alpha(mem.size());
    for (std::size_t j = mem.size(); j-- > 0;) {
      const Eigen::VectorXd s = mem[j].first.cwiseProduct(free), y = mem[j].second.cwiseProduct(free);
      const double sy = s.dot(y);
      if (sy <= 0) continue;
      alpha[j] = s.dot(q) / sy;
      q -= alpha[j] * y;
    }
    if (!mem.empty()) {
      const Eigen::VectorXd s = mem.back().first.cwiseProduct(free), y = mem.back().second.cwiseProduct(free);
      const double yy = y.squaredNorm(), sy = s.dot(y);
      if (yy > 0 && sy > 0) q *= sy / yy;
    }
    for (std::size_t j = 0; j < mem.size(); ++j) {
      const Eigen::VectorXd s = mem[j].first.cwiseProduct(free), y = mem[j].second.cwiseProduct(free);
      const double sy = s.dot(y);
      if (sy <= 0) continue;
      const double beta = y.dot(q) / sy;
      q += (alpha[j] - beta) * s;
    }
    Eigen::VectorXd d = -q.cwiseProduct(free);
    if (!(g.dot(d) < 0)) {
      d = -g.cwiseProduct(free);
      mem.clear();
    }
    if (mem.empty()) {
      // Unit first step in the box scale.
      const double dmax = d.cwiseAbs().maxCoeff();
      if (dmax > 0) d *= std::min(1.0, 1.0 / dmax);
    }

    double step = 1.0;
    Eigen::VectorXd x_new, g_new(n);
    double f_new = fx;
    bool accepted = false;
    for (int b = 0; b < opt.max_backtracks; ++b, step *= 0.5) {
      x_new = project_box(x + step * d, lo, hi);
      const double decrease = g.dot(x_new - x);
      if (!(decrease < 0)) continue;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= fx + opt.armijo * decrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!mem.empty()) {  // retry from steepest descent before giving up
        mem.clear();
        continue;
      }
      res.exit = LbfgsExit::LineSearch;
      break;
    }

    const Eigen::VectorXd s = x_new - x, y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      mem.emplace_back(s, y);
      if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
    }
    const double rel = (fx - f_new) / std::max(1.0, std::abs(fx));
    x = x_new;
    g = g_new;
    fx = f_new;
    stalled = rel < opt.rel_f_tol ? stalled + 1 : 0;
    if (stalled >= opt.stall_iterations) {
      res.iterations = it + 1;
      res.exit = LbfgsExit::Stalled;
      break;
    }
  }
  res.x = x;
  res.f = fx;
  res.pg_norm = projected_gradient_norm(x, g, lo, hi);
  return res;
}

}  // namespace fluxctl
