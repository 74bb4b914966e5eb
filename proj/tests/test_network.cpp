#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fluxctl/network.hpp"

using namespace fluxctl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("fluxctl_net_" + name); }

}  // namespace

TEST(CanonicalNetwork, Shape) {
  auto net = build_canonical_network();
  EXPECT_EQ(net.num_metabolites(), 8);
  EXPECT_EQ(net.num_fluxes(), 11);
  EXPECT_EQ(net.irreversible_set.size(), 11u);
  EXPECT_EQ(net.manipulatable_set, (std::vector<int>{canonical::V4, canonical::V6}));
  EXPECT_EQ(net.exchange_set.size(), 5u);
  EXPECT_EQ(net.growth_flux_index, canonical::Vext5);
  EXPECT_EQ(net.remaining_set(), (std::vector<int>{canonical::V1, canonical::V2, canonical::V3, canonical::V5}));
}

TEST(CanonicalNetwork, BiomassColumnConsumesPrecursors) {
  auto net = build_canonical_network();
  const auto col = net.stoich.col(canonical::Vext5);
  EXPECT_EQ(col[net.metabolite_index("B")], -1.0);
  EXPECT_EQ(col[net.metabolite_index("C")], -1.0);
  EXPECT_EQ(col[net.metabolite_index("ATP")], -2.0);
}

TEST(CanonicalNetwork, MassBalancesGiveProductIdentities) {
  // E and F rows: V4 = V5 + V6 and V5 = V6 + Vext3, so Vext3 = V5 - V6 and V5 = V4 - V6.
  auto net = build_canonical_network();
  const auto E = net.stoich.row(net.metabolite_index("E"));
  const auto F = net.stoich.row(net.metabolite_index("F"));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(11);
  v[canonical::V4] = 7.0;
  v[canonical::V6] = 2.0;
  v[canonical::V5] = v[canonical::V4] - v[canonical::V6];
  v[canonical::Vext3] = v[canonical::V5] - v[canonical::V6];
  EXPECT_DOUBLE_EQ(E.dot(v), 0.0);
  EXPECT_DOUBLE_EQ(F.dot(v), 0.0);
}

TEST(CanonicalNetwork, CarbonClosureOfSteadyStates) {
  auto net = build_canonical_network();
  const double mu = 2.0, v4 = 4.0, v6 = 1.5;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(11);
  v[canonical::V1] = 2 * mu;
  v[canonical::V2] = mu;
  v[canonical::V3] = mu;
  v[canonical::V4] = v4;
  v[canonical::V5] = v4 - v6;
  v[canonical::V6] = v6;
  v[canonical::Vext1] = 3 * mu + v4;
  v[canonical::Vext2] = mu;
  v[canonical::Vext3] = v4 - 2 * v6;
  v[canonical::Vext4] = 2 * v6;
  v[canonical::Vext5] = mu;
  EXPECT_NEAR((net.stoich * v).cwiseAbs().maxCoeff(), 0.0, 1e-14);
  const Eigen::Map<const Eigen::VectorXd> carbon(net.carbon_content.data(), 11);
  EXPECT_NEAR(carbon.dot(v), 0.0, 1e-14);
}

TEST(CanonicalNetwork, RejectsNonPositiveParams) {
  CanonicalNetworkParams p;
  p.g_C = 0.0;
  EXPECT_THROW(build_canonical_network(p), ValidationError);
}

TEST(NetworkIo, RoundTrip) {
  auto net = build_canonical_network();
  const auto path = temp_file("roundtrip.json");
  save_network(net, path.string());
  auto back = load_network(path.string());
  EXPECT_TRUE(back == net);
  EXPECT_EQ(network_hash(back), network_hash(net));
}

TEST(NetworkIo, LowerAboveUpperNamesFlux) {
  auto j = network_to_json(build_canonical_network());
  j["fluxes"][1]["lower"] = 5.0;
  j["fluxes"][1]["upper"] = 1.0;
  j["fluxes"][1]["irreversible"] = false;
  try {
    network_from_json(j);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("V2"), std::string::npos) << e.what();
  }
}

TEST(NetworkIo, ExchangeFluxCannotBeManipulated) {
  auto j = network_to_json(build_canonical_network());
  j["manipulatable"] = {"V4", "Vext3"};
  try {
    network_from_json(j);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("manipulatable"), std::string::npos) << e.what();
  }
}

TEST(NetworkIo, IrreversibleNeedsZeroLowerBound) {
  auto j = network_to_json(build_canonical_network());
  j["fluxes"][0]["lower"] = -1.0;
  EXPECT_THROW(network_from_json(j), ValidationError);
}

TEST(NetworkIo, MalformedFileIsParseError) {
  const auto path = temp_file("broken.json");
  std::ofstream(path) << "{\"metabolites\": [\"A\", ";
  EXPECT_THROW(load_network(path.string()), ParseError);
  auto j = network_to_json(build_canonical_network());
  j.erase("fluxes");
  EXPECT_THROW(network_from_json(j), ParseError);
}
