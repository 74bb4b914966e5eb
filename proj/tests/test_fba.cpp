#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "fluxctl/fba.hpp"
#include "oracles.hpp"

using namespace fluxctl;
using fluxctl::oracle::canonical_closed_form;

namespace {

const MetabolicNetwork& net() {
  static const MetabolicNetwork n = build_canonical_network();
  return n;
}

void expect_matches_closed_form(const FluxSolution& s, double v4, double v6, double tol) {
  ASSERT_TRUE(s.optimal()) << v4 << "," << v6;
  const auto c = canonical_closed_form(v4, v6);
  EXPECT_NEAR(s.v_ext[0], c.q_A, tol);
  EXPECT_NEAR(s.v_ext[1], c.q_D, tol);
  EXPECT_NEAR(s.v_ext[2], c.q_F, tol);
  EXPECT_NEAR(s.v_ext[3], c.q_G, tol);
  EXPECT_NEAR(s.v_ext[4], c.mu, tol);
}

}  // namespace

TEST(SolveFba, NoDiversion) {
  auto s = solve_fba(net(), Eigen::Vector2d(0, 0));
  expect_matches_closed_form(s, 0, 0, 1e-8);
  EXPECT_NEAR(s.v_ext[4], 10.0 / 3.0, 1e-8);
  EXPECT_NEAR(s.v_ext[1], s.v_ext[4], 1e-8);
}

TEST(SolveFba, FullDiversionStopsGrowth) {
  auto s = solve_fba(net(), Eigen::Vector2d(10, 0));
  expect_matches_closed_form(s, 10, 0, 1e-8);
  EXPECT_EQ(s.v_ext[4], 0.0);
  EXPECT_NEAR(s.v_ext[2], 10.0, 1e-12);
}

TEST(SolveFba, AllProductAsG) {
  auto s = solve_fba(net(), Eigen::Vector2d(10, 5));
  expect_matches_closed_form(s, 10, 5, 1e-8);
  EXPECT_NEAR(s.v_ext[3], 10.0, 1e-12);
  EXPECT_NEAR(s.v_ext[2], 0.0, 1e-12);
}

TEST(SolveFba, InfeasiblePinIsData) {
  auto s = solve_fba(net(), Eigen::Vector2d(4, 3));
  EXPECT_EQ(s.status, LpStatus::Infeasible);
  auto neg = solve_fba(net(), Eigen::Vector2d(-1, 0));
  EXPECT_EQ(neg.status, LpStatus::Infeasible);
}

TEST(SolveFba, DimensionErrors) {
  EXPECT_THROW(solve_fba(net(), Eigen::VectorXd::Zero(3)), ValidationError);
  EXPECT_THROW(solve_fba(net(), Eigen::Vector2d(0, 0), 42), ValidationError);
}

TEST(SolveFba, SteadyStateResiduals) {
  auto s = solve_fba(net(), Eigen::Vector2d(3.4, 1.1));
  ASSERT_TRUE(s.optimal());
  EXPECT_LE((net().stoich * s.v_full).cwiseAbs().maxCoeff(), 1e-9);
  for (int i = 0; i < 11; ++i) EXPECT_GE(s.v_full[i], -1e-9);
  const auto c = canonical_closed_form(3.4, 1.1);
  EXPECT_NEAR(s.v_full[canonical::V1], c.V1, 1e-8);
  EXPECT_NEAR(s.v_full[canonical::V5], c.V5, 1e-8);
}

TEST(SolveFba, ReversibleFluxTieBreakUsesMagnitude) {
  // A reversible transport in parallel to V1 must not be driven negative by the tie-break.
  auto n = build_canonical_network();
  auto j = network_to_json(n);
  j["fluxes"].push_back({{"name", "T"}, {"lower", -5.0}, {"upper", 5.0}, {"irreversible", false}});
  j["stoichiometry"].push_back({{"metabolite", "A"}, {"flux", "T"}, {"coeff", -1.0}});
  j["stoichiometry"].push_back({{"metabolite", "B"}, {"flux", "T"}, {"coeff", 1.0}});
  auto ext = network_from_json(j);
  auto s = solve_fba(ext, Eigen::Vector2d(0, 0));
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.v_ext[4], 10.0 / 3.0, 1e-8);
  EXPECT_NEAR(std::abs(s.v_full[ext.flux_index("T")]) + s.v_full[canonical::V1], 20.0 / 3.0, 1e-8);
}

TEST(GenerateGrid, DefaultCount) {
  auto g = GridSpec::uniform();
  EXPECT_EQ(g.v4_values.size(), 51u);
  EXPECT_EQ(g.v6_fractions.size(), 51u);
  EXPECT_EQ(generate_grid(g).size(), 2601u);
  EXPECT_EQ(g.v4_values.back(), 10.0);
  EXPECT_EQ(g.v6_fractions.back(), 0.5);
}

TEST(GenerateGrid, ZeroRowCollapses) {
  GridSpec g{{0.0}, GridSpec::uniform().v6_fractions};
  for (const auto& p : generate_grid(g)) EXPECT_EQ(p, Eigen::Vector2d(0, 0));
}

TEST(GenerateGrid, DirectProduct) {
  GridSpec g{{10.0}, {0.0, 0.5}};
  auto pts = generate_grid(g);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0], Eigen::Vector2d(10, 0));
  EXPECT_EQ(pts[1], Eigen::Vector2d(10, 5));
}

TEST(GenerateGrid, RejectsOutOfRange) {
  GridSpec g{{0.0, 11.0}, {0.0}};
  EXPECT_THROW(g.validate(10.0), ValidationError);
  GridSpec h{{1.0}, {0.6}};
  EXPECT_THROW(h.validate(10.0), ValidationError);
}

TEST(BuildDataset, CanonicalDefaults) {
  auto ds = build_dataset(net(), GridSpec::uniform(), false);
  // Oracle: enumerate the grid and count distinct (V4, V6) pairs.
  std::set<std::pair<double, double>> distinct;
  for (const auto& p : generate_grid(GridSpec::uniform())) distinct.insert({p[0], p[1]});
  EXPECT_EQ(distinct.size(), 2551u);
  EXPECT_EQ(ds.rows(), 2551);
  EXPECT_TRUE(ds.infeasible.empty());
  EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"V4", "V6"}));
  EXPECT_EQ(ds.label_names, (std::vector<std::string>{"q_A", "q_D", "q_F", "q_G", "mu"}));
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    const auto& y = ds.labels.row(r);
    EXPECT_NEAR(y[0], y[1] + y[2] + y[3] + 2.0 * y[4], 1e-8);
  }
}

TEST(BuildDataset, IncludeRemainingAddsFourLabels) {
  GridSpec g{{0.0, 5.0, 10.0}, {0.0, 0.25, 0.5}};
  auto narrow = build_dataset(net(), g, false);
  auto wide = build_dataset(net(), g, true);
  EXPECT_EQ(wide.labels.cols() - narrow.labels.cols(), 4);
  EXPECT_EQ(wide.label_names.back(), "V5");
}

TEST(BuildDataset, InfeasibleGoesToSidecar) {
  // Hand-made grid point outside the cone via a network whose V6 cap is exceeded is not
  // reachable with fractions <= 0.5; use a reduced uptake instead.
  CanonicalNetworkParams p;
  p.v_uptake_max = 4.0;
  auto small = build_canonical_network(p);
  GridSpec g{{0.0, 4.0}, {0.0, 0.5}};
  auto ds = build_dataset(small, g, false);
  EXPECT_EQ(ds.rows(), 3);
  EXPECT_TRUE(ds.infeasible.empty());
}

TEST(BuildDataset, IndependentOfWorkerCount) {
  GridSpec g = GridSpec::uniform(10.0, 1.0, 0.5, 0.1);
  auto a = build_dataset(net(), g, true, 1);
  auto b = build_dataset(net(), g, true, 4);
  ASSERT_EQ(a.rows(), b.rows());
  EXPECT_TRUE((a.features.array() == b.features.array()).all());
  EXPECT_TRUE((a.labels.array() == b.labels.array()).all());
}

TEST(BuildDataset, GrowthNonIncreasingInV4) {
  auto g = GridSpec::uniform();
  for (double f : {0.0, 0.13, 0.5}) {
    double prev = kInf;
    for (double v4 : g.v4_values) {
      auto s = solve_fba(net(), Eigen::Vector2d(v4, f * v4));
      ASSERT_TRUE(s.optimal());
      EXPECT_LE(s.v_ext[4], prev + 1e-12);
      prev = s.v_ext[4];
    }
  }
}

TEST(DatasetCsv, RoundTripAndHeader) {
  GridSpec g{{0.0, 10.0}, {0.0, 0.5}};
  auto ds = build_dataset(net(), g, true);
  std::ostringstream os;
  write_dataset_csv(ds, os);
  const std::string text = os.str();
  EXPECT_EQ(text.rfind("# network=", 0), 0u);
  EXPECT_NE(text.find("tiebreak=parsimonious\nV4,V6,q_A,q_D,q_F,q_G,mu,V1,V2,V3,V5\n"), std::string::npos);
  const auto path = std::filesystem::temp_directory_path() / "fluxctl_ds.csv";
  save_dataset(ds, path.string());
  auto back = load_dataset(path.string());
  EXPECT_EQ(back.provenance, ds.provenance);
  EXPECT_EQ(back.label_names, ds.label_names);
  EXPECT_TRUE((back.labels.array() == ds.labels.array()).all());
}

TEST(YieldSpace, ClosedFormRows) {
  GridSpec g{{0.0, 10.0}, {0.0}};
  auto t = yield_space(build_dataset(net(), g, false));
  ASSERT_EQ(t.points.size(), 2u);
  EXPECT_NEAR(t.points[0].y_bio, 1.0 / 3.0, 1e-9);
  EXPECT_NEAR(t.points[0].y_f, 0.0, 1e-12);
  EXPECT_NEAR(t.points[0].y_g, 0.0, 1e-12);
  EXPECT_NEAR(t.points[1].y_f, 1.0, 1e-12);
  EXPECT_NEAR(t.points[1].y_bio, 0.0, 1e-12);
}

TEST(YieldSpace, EmptyAndZeroUptake) {
  Dataset empty;
  EXPECT_TRUE(yield_space(empty).points.empty());
  Dataset ds;
  ds.feature_names = {"V4", "V6"};
  ds.label_names = {"q_A", "q_D", "q_F", "q_G", "mu"};
  ds.features = Eigen::MatrixXd::Zero(1, 2);
  ds.labels = Eigen::MatrixXd::Zero(1, 5);
  auto t = yield_space(ds);
  EXPECT_TRUE(t.points.empty());
  EXPECT_EQ(t.omitted_zero_uptake, 1);
}
