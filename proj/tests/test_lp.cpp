#include <gtest/gtest.h>

#include <random>

#include "fluxctl/fba.hpp"
#include "fluxctl/lp.hpp"
#include "oracles.hpp"

using namespace fluxctl;

namespace {

LinearProgram make_lp(Eigen::VectorXd c, Eigen::MatrixXd A, Eigen::VectorXd b, Eigen::VectorXd lo,
                      Eigen::VectorXd hi) {
  return LinearProgram{std::move(c), std::move(A), std::move(b), std::move(lo), std::move(hi)};
}

double max_residual(const LinearProgram& lp, const Eigen::VectorXd& x) {
  return (lp.eq_matrix * x - lp.eq_rhs).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(SolveLp, SingleConstraint) {
  // max x1 s.t. x1 + x2 = 1, x >= 0
  auto lp = make_lp(Eigen::Vector2d(1, 0), Eigen::RowVector2d(1, 1), Eigen::VectorXd::Ones(1),
                    Eigen::Vector2d(0, 0), Eigen::Vector2d(kInf, kInf));
  auto sol = solve_lp(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_DOUBLE_EQ(sol.x[0], 1.0);
  EXPECT_DOUBLE_EQ(sol.x[1], 0.0);
  EXPECT_DOUBLE_EQ(sol.objective_value, 1.0);
}

TEST(SolveLp, FullyPinnedInconsistentIsInfeasible) {
  auto lp = make_lp(Eigen::Vector2d(1, 1), Eigen::RowVector2d(1, 1), Eigen::VectorXd::Constant(1, 3.0),
                    Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1));
  EXPECT_EQ(solve_lp(lp).status, LpStatus::Infeasible);
}

TEST(SolveLp, UnboundedRay) {
  auto lp = make_lp(Eigen::Vector2d(1, 0), Eigen::RowVector2d(1, -1), Eigen::VectorXd::Zero(1),
                    Eigen::Vector2d(0, 0), Eigen::Vector2d(kInf, kInf));
  EXPECT_EQ(solve_lp(lp).status, LpStatus::Unbounded);
}

TEST(SolveLp, FreeAndUpperOnlyVariables) {
  // max x2 s.t. x1 - x2 = 1, x1 free, x2 in (-inf, 3] -> x2 = 3, x1 = 4.
  auto lp = make_lp(Eigen::Vector2d(0, 1), Eigen::RowVector2d(1, -1), Eigen::VectorXd::Ones(1),
                    Eigen::Vector2d(-kInf, -kInf), Eigen::Vector2d(kInf, 3));
  auto sol = solve_lp(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.x[0], 4.0, 1e-12);
  EXPECT_NEAR(sol.x[1], 3.0, 1e-12);
}

TEST(SolveLp, RejectsMalformedBounds) {
  auto lp = make_lp(Eigen::Vector2d(1, 0), Eigen::RowVector2d(1, 1), Eigen::VectorXd::Ones(1),
                    Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1));
  EXPECT_THROW(solve_lp(lp), ValidationError);
}

TEST(SolveLp, IterationLimitCarriesBestPoint) {
  std::mt19937_64 rng(7);
  auto lp = oracle::random_bounded_lp(rng, 6, 3);
  LpTolerances tol;
  tol.max_iterations = 0;
  EXPECT_THROW(solve_lp(lp, tol), LpIterationLimit);
}

// Oracle equivalence against brute-force vertex enumeration.
TEST(SolveLp, MatchesVertexEnumerationOnRandomInstances) {
  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<int> nvars(1, 6);
  int checked = 0;
  while (checked < 200) {
    const int n = nvars(rng);
    const int m = std::uniform_int_distribution<int>(0, std::min(4, n))(rng);
    auto lp = oracle::random_bounded_lp(rng, n, m);
    if (m > 0 && Eigen::FullPivLU<Eigen::MatrixXd>(lp.eq_matrix).rank() < m) continue;
    const auto verts = oracle::enumerate_vertices(lp);
    ASSERT_FALSE(verts.empty());
    double best = -kInf;
    for (const auto& v : verts) best = std::max(best, lp.objective.dot(v));
    const auto sol = solve_lp(lp);
    ASSERT_EQ(sol.status, LpStatus::Optimal) << "instance " << checked;
    EXPECT_NEAR(sol.objective_value, best, 1e-8) << "instance " << checked;
    if (m > 0) EXPECT_LE(max_residual(lp, sol.x), 1e-9);
    for (int j = 0; j < n; ++j) {
      EXPECT_GE(sol.x[j], lp.lower[j] - 1e-9);
      EXPECT_LE(sol.x[j], lp.upper[j] + 1e-9);
    }
    ++checked;
  }
}

TEST(SolveLp, Deterministic) {
  std::mt19937_64 rng(99);
  auto lp = oracle::random_bounded_lp(rng, 6, 4);
  auto a = solve_lp(lp), b = solve_lp(lp);
  ASSERT_EQ(a.status, b.status);
  for (Eigen::Index j = 0; j < a.x.size(); ++j) EXPECT_EQ(a.x[j], b.x[j]);
}

TEST(SolveLexicographic, DegenerateEdgePicksMinimalFluxSumVertex) {
  // max x3 s.t. x1 + 2 x2 - x3 = 0, x in [0, 5] x [0, 5] x [0, 2]
  // Optimal face x3 = 2 is the edge x1 + 2 x2 = 2.
  auto lp = make_lp(Eigen::Vector3d(0, 0, 1), Eigen::RowVector3d(1, 2, -1), Eigen::VectorXd::Zero(1),
                    Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(5, 5, 2));
  const Eigen::Vector3d secondary(1, 1, 1);

  // Oracle: among optimal vertices, the one with least flux sum.
  const auto verts = oracle::enumerate_vertices(lp);
  double zstar = -kInf;
  for (const auto& v : verts) zstar = std::max(zstar, lp.objective.dot(v));
  Eigen::VectorXd expected;
  double best_sec = kInf;
  for (const auto& v : verts)
    if (lp.objective.dot(v) >= zstar - 1e-12 && secondary.dot(v) < best_sec) best_sec = secondary.dot(v), expected = v;
  ASSERT_NEAR(expected[1], 1.0, 1e-12);

  auto sol = solve_lexicographic(lp, secondary);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR((sol.x - expected).cwiseAbs().maxCoeff(), 0.0, 1e-8);
}

TEST(SolveLexicographic, ZeroSecondaryIsPrimary) {
  std::mt19937_64 rng(5);
  auto lp = oracle::random_bounded_lp(rng, 5, 2);
  auto a = solve_lp(lp);
  auto b = solve_lexicographic(lp, Eigen::VectorXd::Zero(5));
  EXPECT_EQ(a.objective_value, b.objective_value);
}

TEST(SolveLp, CanonicalGrowthOptimum) {
  auto net = build_canonical_network();
  auto sol = solve_fba(net, Eigen::Vector2d(0, 0));
  ASSERT_TRUE(sol.optimal());
  EXPECT_NEAR(sol.objective_value, 10.0 / 3.0, 1e-8);
}

TEST(SolveLexicographic, CanonicalNoGrowthBranchIsExactlyZero) {
  auto net = build_canonical_network();
  auto sol = solve_fba(net, Eigen::Vector2d(10, 0));
  ASSERT_TRUE(sol.optimal());
  EXPECT_EQ(sol.v_full[canonical::V1], 0.0);
  EXPECT_EQ(sol.v_full[canonical::V2], 0.0);
  EXPECT_EQ(sol.v_full[canonical::V3], 0.0);
}
