#pragma once

/**
 * @file
 * @brief Metabolic network data model and the canonical two-product network.
 *
 * A network is a stoichiometric matrix S (internal metabolites by fluxes)
 * together with per-flux bounds and the index sets that the rest of the
 * toolkit needs: irreversible fluxes, manipulatable (controllable
 * intracellular) fluxes and exchange fluxes. Internal metabolites are only
 * ever balanced at steady state (S v = 0); they are never integrated.
 */

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "format.hpp"

namespace fluxctl {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct MetabolicNetwork {
  std::vector<std::string> metabolite_names;
  std::vector<std::string> flux_names;
  Eigen::MatrixXd stoich;  ///< n_metabolites x n_fluxes
  std::vector<double> lower_bounds;
  std::vector<double> upper_bounds;
  std::vector<int> irreversible_set;
  std::vector<int> manipulatable_set;  ///< ordered, defines the feature order
  std::vector<int> exchange_set;       ///< ordered, defines the label order
  int growth_flux_index = -1;
  std::vector<double> carbon_content;  ///< net carbon export per unit flux

  int num_metabolites() const { return static_cast<int>(metabolite_names.size()); }
  int num_fluxes() const { return static_cast<int>(flux_names.size()); }

  int flux_index(const std::string& name) const {
    auto it = std::find(flux_names.begin(), flux_names.end(), name);
    if (it == flux_names.end()) throw ValidationError("unknown flux '" + name + "'");
    return static_cast<int>(it - flux_names.begin());
  }

  int metabolite_index(const std::string& name) const {
    auto it = std::find(metabolite_names.begin(), metabolite_names.end(), name);
    if (it == metabolite_names.end()) throw ValidationError("unknown metabolite '" + name + "'");
    return static_cast<int>(it - metabolite_names.begin());
  }

  /// Fluxes that are neither manipulated nor exchanged, in index order.
  std::vector<int> remaining_set() const {
    std::set<int> taken(manipulatable_set.begin(), manipulatable_set.end());
    taken.insert(exchange_set.begin(), exchange_set.end());
    std::vector<int> out;
    for (int i = 0; i < num_fluxes(); ++i)
      if (!taken.count(i)) out.push_back(i);
    return out;
  }

  bool is_irreversible(int i) const {
    return std::find(irreversible_set.begin(), irreversible_set.end(), i) != irreversible_set.end();
  }

  /// Throws ValidationError naming the offending field on any invariant violation.
  void validate() const {
    const int nm = num_metabolites();
    const int nv = num_fluxes();
    if (nm == 0 || nv == 0) throw ValidationError("network: empty metabolite or flux list");
    if (stoich.rows() != nm || stoich.cols() != nv)
      throw ValidationError("stoichiometry: matrix is " + std::to_string(stoich.rows()) + "x" +
                            std::to_string(stoich.cols()) + ", expected " + std::to_string(nm) +
                            "x" + std::to_string(nv));
    if (static_cast<int>(lower_bounds.size()) != nv || static_cast<int>(upper_bounds.size()) != nv)
      throw ValidationError("fluxes: bound vectors do not match flux count");
    if (static_cast<int>(carbon_content.size()) != nv)
      throw ValidationError("carbon_export: coefficient vector does not match flux count");
    auto check_index = [nv](int i, const char* field) {
      if (i < 0 || i >= nv) throw ValidationError(std::string(field) + ": flux index out of range");
    };
    for (int j = 0; j < nv; ++j) {
      if (std::isnan(lower_bounds[j]) || std::isnan(upper_bounds[j]))
        throw ValidationError("fluxes: bound of '" + flux_names[j] + "' is NaN");
      if (lower_bounds[j] > upper_bounds[j])
        throw ValidationError("fluxes: lower > upper for flux '" + flux_names[j] + "'");
      if (stoich.col(j).cwiseAbs().maxCoeff() == 0.0)
        throw ValidationError("stoichiometry: flux '" + flux_names[j] + "' has an all-zero column");
    }
    for (int i : irreversible_set) {
      check_index(i, "irreversible");
      if (lower_bounds[i] != 0.0)
        throw ValidationError("fluxes: irreversible flux '" + flux_names[i] +
                              "' must have lower bound 0");
    }
    for (int i : manipulatable_set) check_index(i, "manipulatable");
    for (int i : exchange_set) check_index(i, "exchange");
    check_index(growth_flux_index, "growth_flux");
    for (int i : manipulatable_set)
      if (std::find(exchange_set.begin(), exchange_set.end(), i) != exchange_set.end())
        throw ValidationError("manipulatable: flux '" + flux_names[i] +
                              "' is an exchange flux; manipulated fluxes must be intracellular");
    if (std::find(exchange_set.begin(), exchange_set.end(), growth_flux_index) == exchange_set.end())
      throw ValidationError("growth_flux: must be listed in exchange");
    std::set<std::string> uniq(flux_names.begin(), flux_names.end());
    if (uniq.size() != flux_names.size()) throw ValidationError("fluxes: duplicate flux name");
  }

  friend bool operator==(const MetabolicNetwork& a, const MetabolicNetwork& b) {
    return a.metabolite_names == b.metabolite_names && a.flux_names == b.flux_names &&
           a.stoich.rows() == b.stoich.rows() && a.stoich.cols() == b.stoich.cols() &&
           a.stoich == b.stoich && a.lower_bounds == b.lower_bounds &&
           a.upper_bounds == b.upper_bounds && a.irreversible_set == b.irreversible_set &&
           a.manipulatable_set == b.manipulatable_set && a.exchange_set == b.exchange_set &&
           a.growth_flux_index == b.growth_flux_index && a.carbon_content == b.carbon_content;
  }
};

struct CanonicalNetworkParams {
  double v_uptake_max = 10.0;     ///< mmol/gDW/h
  double g_B = 1.0;               ///< mmol B per g biomass
  double g_C = 1.0;               ///< mmol C per g biomass
  double g_ATP = 2.0;             ///< mmol ATP per g biomass
  double atp_per_energy_rxn = 2.0;

  void validate() const {
    if (!(v_uptake_max > 0 && g_B > 0 && g_C > 0 && g_ATP > 0 && atp_per_energy_rxn > 0))
      throw ValidationError("canonical network parameters must be strictly positive");
  }

  /// Maximal growth rate with no flux diverted into the product pathway.
  double mu_max() const { return v_uptake_max / (g_B + g_C + g_ATP / atp_per_energy_rxn); }
};

/// Flux indices of the canonical network, in storage order
/// (intracellular fluxes first, then exchanges).
namespace canonical {
inline constexpr int V1 = 0, V2 = 1, V3 = 2, V4 = 3, V5 = 4, V6 = 5;
inline constexpr int Vext1 = 6, Vext2 = 7, Vext3 = 8, Vext4 = 9, Vext5 = 10;
}  // namespace canonical

/**
 * Builds the 8-metabolite, 11-flux representative network:
 *
 *   Vext1: A_ext -> A          V1: A -> B         V2: A -> D + n ATP
 *   V3: B -> C                 V4: A -> E         V5: E -> F
 *   V6: E + F -> 2 G           Vext2: D ->        Vext3: F ->
 *   Vext4: G ->                Vext5: g_B B + g_C C + g_ATP ATP -> 1 g biomass
 *
 * All fluxes are irreversible, V4 and V6 are manipulatable.
 */
inline MetabolicNetwork build_canonical_network(const CanonicalNetworkParams& p = {}) {
  using namespace canonical;
  p.validate();
  MetabolicNetwork net;
  net.metabolite_names = {"A", "B", "C", "D", "E", "F", "G", "ATP"};
  net.flux_names = {"V1", "V2", "V3", "V4", "V5", "V6", "Vext1", "Vext2", "Vext3", "Vext4", "Vext5"};
  enum { A, B, C, D, E, F, G, ATP };
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(8, 11);
  S(A, Vext1) = 1;
  S(A, V1) = -1, S(B, V1) = 1;
  S(A, V2) = -1, S(D, V2) = 1, S(ATP, V2) = p.atp_per_energy_rxn;
  S(B, V3) = -1, S(C, V3) = 1;
  S(A, V4) = -1, S(E, V4) = 1;
  S(E, V5) = -1, S(F, V5) = 1;
  S(E, V6) = -1, S(F, V6) = -1, S(G, V6) = 2;
  S(D, Vext2) = -1;
  S(F, Vext3) = -1;
  S(G, Vext4) = -1;
  S(B, Vext5) = -p.g_B, S(C, Vext5) = -p.g_C, S(ATP, Vext5) = -p.g_ATP;
  net.stoich = S;
  net.lower_bounds.assign(11, 0.0);
  net.upper_bounds.assign(11, kInf);
  net.upper_bounds[Vext1] = p.v_uptake_max;
  for (int i = 0; i < 11; ++i) net.irreversible_set.push_back(i);
  net.manipulatable_set = {V4, V6};
  net.exchange_set = {Vext1, Vext2, Vext3, Vext4, Vext5};
  net.growth_flux_index = Vext5;
  net.carbon_content.assign(11, 0.0);
  net.carbon_content[Vext1] = -1.0;
  net.carbon_content[Vext2] = 1.0;
  net.carbon_content[Vext3] = 1.0;
  net.carbon_content[Vext4] = 1.0;
  net.carbon_content[Vext5] = p.g_B + p.g_C;
  net.validate();
  return net;
}

// Serialization. Unbounded flux bounds are written as JSON null.

inline nlohmann::json bound_to_json(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

inline nlohmann::json network_to_json(const MetabolicNetwork& net) {
  using nlohmann::json;
  json j;
  j["metabolites"] = net.metabolite_names;
  json fluxes = json::array();
  for (int i = 0; i < net.num_fluxes(); ++i) {
    fluxes.push_back({{"name", net.flux_names[i]},
                      {"lower", bound_to_json(net.lower_bounds[i])},
                      {"upper", bound_to_json(net.upper_bounds[i])},
                      {"irreversible", net.is_irreversible(i)}});
  }
  j["fluxes"] = fluxes;
  json st = json::array();
  for (int c = 0; c < net.num_fluxes(); ++c)
    for (int r = 0; r < net.num_metabolites(); ++r)
      if (net.stoich(r, c) != 0.0)
        st.push_back({{"metabolite", net.metabolite_names[r]},
                      {"flux", net.flux_names[c]},
                      {"coeff", net.stoich(r, c)}});
  j["stoichiometry"] = st;
  auto names = [&](const std::vector<int>& idx) {
    std::vector<std::string> out;
    for (int i : idx) out.push_back(net.flux_names[i]);
    return out;
  };
  j["manipulatable"] = names(net.manipulatable_set);
  j["exchange"] = names(net.exchange_set);
  j["growth_flux"] = net.flux_names[net.growth_flux_index];
  json carbon = json::object();
  for (int i = 0; i < net.num_fluxes(); ++i)
    if (net.carbon_content[i] != 0.0) carbon[net.flux_names[i]] = net.carbon_content[i];
  j["carbon_export"] = carbon;
  return j;
}

inline MetabolicNetwork network_from_json(const nlohmann::json& j) {
  using nlohmann::json;
  auto require = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw ParseError(std::string("network: missing key '") + key + "'");
    return j.at(key);
  };
  MetabolicNetwork net;
  try {
    net.metabolite_names = require("metabolites").get<std::vector<std::string>>();
    const json& fluxes = require("fluxes");
    if (!fluxes.is_array()) throw ParseError("fluxes: expected a list");
    for (const auto& f : fluxes) {
      net.flux_names.push_back(f.at("name").get<std::string>());
      const json& lo = f.at("lower");
      const json& hi = f.at("upper");
      net.lower_bounds.push_back(lo.is_null() ? -kInf : lo.get<double>());
      net.upper_bounds.push_back(hi.is_null() ? kInf : hi.get<double>());
      if (f.value("irreversible", false))
        net.irreversible_set.push_back(static_cast<int>(net.flux_names.size()) - 1);
    }
    net.stoich = Eigen::MatrixXd::Zero(net.num_metabolites(), net.num_fluxes());
    for (const auto& e : require("stoichiometry")) {
      const int r = net.metabolite_index(e.at("metabolite").get<std::string>());
      const int c = net.flux_index(e.at("flux").get<std::string>());
      net.stoich(r, c) = e.at("coeff").get<double>();
    }
    for (const auto& name : require("manipulatable").get<std::vector<std::string>>())
      net.manipulatable_set.push_back(net.flux_index(name));
    for (const auto& name : require("exchange").get<std::vector<std::string>>())
      net.exchange_set.push_back(net.flux_index(name));
    net.growth_flux_index = net.flux_index(require("growth_flux").get<std::string>());
    net.carbon_content.assign(net.flux_names.size(), 0.0);
    if (j.contains("carbon_export"))
      for (const auto& [name, coeff] : j.at("carbon_export").items())
        net.carbon_content[net.flux_index(name)] = coeff.get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("network: ") + e.what());
  }
  net.validate();
  return net;
}

inline void save_network(const MetabolicNetwork& net, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  os << network_to_json(net).dump(2) << '\n';
}

inline MetabolicNetwork load_network(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open network file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("network '" + path + "': " + e.what());
  }
  return network_from_json(j);
}

/// Stable content hash used in dataset provenance headers.
inline std::string network_hash(const MetabolicNetwork& net) {
  return hex64(fnv1a64(network_to_json(net).dump()));
}

}  // namespace fluxctl
