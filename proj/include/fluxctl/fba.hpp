#pragma once

/**
 * @file
 * @brief Flux balance analysis with pinned manipulatable fluxes, grid sweeps
 * and the training dataset / yield-space tables derived from them.
 */

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "format.hpp"
#include "lp.hpp"
#include "network.hpp"
#include "parallel.hpp"

namespace fluxctl {

struct FluxSolution {
  Eigen::VectorXd v_man;
  Eigen::VectorXd v_full;
  Eigen::VectorXd v_ext;
  LpStatus status = LpStatus::Infeasible;
  double objective_value = std::numeric_limits<double>::quiet_NaN();

  bool optimal() const { return status == LpStatus::Optimal; }
};

/**
 * Maximizes flux `objective` subject to S v = 0, the network bounds and
 * v[manipulatable] == v_man. Degenerate optima are resolved by minimizing
 * the total absolute flux over the optimal face. Pins outside a flux's
 * bounds produce an Infeasible solution.
 */
inline FluxSolution solve_fba(const MetabolicNetwork& net, const Eigen::VectorXd& v_man, int objective,
                              const LpTolerances& tol = {}) {
  const int nv = net.num_fluxes();
  if (v_man.size() != static_cast<Eigen::Index>(net.manipulatable_set.size()))
    throw ValidationError("solve_fba: v_man has " + std::to_string(v_man.size()) + " entries, expected " +
                          std::to_string(net.manipulatable_set.size()));
  if (objective < 0 || objective >= nv) throw ValidationError("solve_fba: objective flux index out of range");

  FluxSolution sol;
  sol.v_man = v_man;
  std::vector<double> lo = net.lower_bounds, hi = net.upper_bounds;
  for (std::size_t k = 0; k < net.manipulatable_set.size(); ++k) {
    const int i = net.manipulatable_set[k];
    if (!(v_man[k] >= lo[i] && v_man[k] <= hi[i])) return sol;
    lo[i] = hi[i] = v_man[k];
  }

  // Fluxes that can take both signs get a separate negative-part column so
  // that the tie-break minimizes |v| rather than v.
  std::vector<int> neg_part;
  for (int i = 0; i < nv; ++i)
    if (lo[i] < 0 && hi[i] > 0) neg_part.push_back(i);
  const int ncols = nv + static_cast<int>(neg_part.size());

  LinearProgram lp;
  lp.objective = Eigen::VectorXd::Zero(ncols);
  lp.eq_matrix = Eigen::MatrixXd::Zero(net.num_metabolites(), ncols);
  lp.eq_matrix.leftCols(nv) = net.stoich;
  lp.eq_rhs = Eigen::VectorXd::Zero(net.num_metabolites());
  lp.lower = Eigen::VectorXd(ncols);
  lp.upper = Eigen::VectorXd(ncols);
  Eigen::VectorXd secondary = Eigen::VectorXd::Zero(ncols);
  for (int i = 0; i < nv; ++i) {
    lp.lower[i] = lo[i];
    lp.upper[i] = hi[i];
    secondary[i] = hi[i] <= 0 ? -1.0 : 1.0;
  }
  lp.objective[objective] = 1.0;
  for (std::size_t k = 0; k < neg_part.size(); ++k) {
    const int i = neg_part[k];
    const int c = nv + static_cast<int>(k);
    lp.lower[i] = 0.0;  // positive part
    lp.lower[c] = 0.0;
    lp.upper[c] = -lo[i];
    lp.eq_matrix.col(c) = -net.stoich.col(i);
    if (i == objective) lp.objective[c] = -1.0;
    secondary[c] = 1.0;
  }

  LpSolution lps = solve_lexicographic(lp, secondary, tol);
  sol.status = lps.status;
  if (lps.status != LpStatus::Optimal) return sol;
  sol.v_full = lps.x.head(nv);
  for (std::size_t k = 0; k < neg_part.size(); ++k) sol.v_full[neg_part[k]] -= lps.x[nv + static_cast<Eigen::Index>(k)];
  for (std::size_t k = 0; k < net.manipulatable_set.size(); ++k) sol.v_full[net.manipulatable_set[k]] = v_man[k];
  sol.v_ext = Eigen::VectorXd(net.exchange_set.size());
  for (std::size_t k = 0; k < net.exchange_set.size(); ++k) sol.v_ext[k] = sol.v_full[net.exchange_set[k]];
  sol.objective_value = sol.v_full[objective];
  return sol;
}

inline FluxSolution solve_fba(const MetabolicNetwork& net, const Eigen::VectorXd& v_man) {
  return solve_fba(net, v_man, net.growth_flux_index);
}

/// Two-flux grid: the second manipulated flux is a fraction of the first.
struct GridSpec {
  std::vector<double> v4_values;
  std::vector<double> v6_fractions;

  /// {0, step, ..., v_max} x {0, frac_step, ..., frac_max}; endpoints included.
  static GridSpec uniform(double v_max = 10.0, double step = 0.2, double frac_max = 0.5, double frac_step = 0.01) {
    GridSpec g;
    const int n1 = static_cast<int>(std::lround(v_max / step));
    const int n2 = static_cast<int>(std::lround(frac_max / frac_step));
    for (int i = 0; i <= n1; ++i) g.v4_values.push_back(i == n1 ? v_max : i * step);
    for (int j = 0; j <= n2; ++j) g.v6_fractions.push_back(j == n2 ? frac_max : j * frac_step);
    return g;
  }

  void validate(double v_max) const {
    if (v4_values.empty() || v6_fractions.empty()) throw ValidationError("grid: empty value set");
    for (double v : v4_values)
      if (!(v >= 0 && v <= v_max)) throw ValidationError("grid: v4 value outside [0, v_uptake_max]");
    for (double f : v6_fractions)
      if (!(f >= 0 && f <= 0.5)) throw ValidationError("grid: fraction outside [0, 0.5]");
  }

  std::string describe() const {
    auto part = [](const char* name, const std::vector<double>& v) {
      return std::string(name) + "[n=" + std::to_string(v.size()) + "," + format_double(v.front()) + ".." +
             format_double(v.back()) + "]";
    };
    return part("v4", v4_values) + "x" + part("f", v6_fractions);
  }
};

/// Row-major over (v4, fraction): v4 is the slow index.
inline std::vector<Eigen::Vector2d> generate_grid(const GridSpec& spec) {
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(spec.v4_values.size() * spec.v6_fractions.size());
  for (double v4 : spec.v4_values)
    for (double f : spec.v6_fractions) pts.emplace_back(v4, f * v4);
  return pts;
}

struct InfeasiblePoint {
  Eigen::VectorXd v_man;
  LpStatus status;
};

struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;
  Eigen::MatrixXd features;  ///< rows x n_features
  Eigen::MatrixXd labels;    ///< rows x n_labels
  std::string provenance;    ///< "network=<hash> grid=<spec> tiebreak=parsimonious"
  std::vector<InfeasiblePoint> infeasible;

  Eigen::Index rows() const { return features.rows(); }

  Dataset subset(const std::vector<Eigen::Index>& idx) const {
    Dataset d;
    d.feature_names = feature_names;
    d.label_names = label_names;
    d.provenance = provenance;
    d.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    d.labels.resize(static_cast<Eigen::Index>(idx.size()), labels.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      d.features.row(static_cast<Eigen::Index>(r)) = features.row(idx[r]);
      d.labels.row(static_cast<Eigen::Index>(r)) = labels.row(idx[r]);
    }
    return d;
  }

  int label_index(const std::string& name) const {
    for (std::size_t i = 0; i < label_names.size(); ++i)
      if (label_names[i] == name) return static_cast<int>(i);
    throw ValidationError("dataset has no label column '" + name + "'");
  }
};

/// Label column name for an exchange flux: "mu" for growth, otherwise
/// "q_<metabolite>" after the internal metabolite it exchanges.
inline std::string exchange_label(const MetabolicNetwork& net, int flux) {
  if (flux == net.growth_flux_index) return "mu";
  for (int r = 0; r < net.num_metabolites(); ++r)
    if (net.stoich(r, flux) != 0.0) return "q_" + net.metabolite_names[r];
  return "q_" + net.flux_names[flux];
}

/**
 * Solves FBA at every grid point (data-parallel), drops non-optimal points
 * into `infeasible`, and removes repeated feature rows keeping the first.
 * Labels are exchange fluxes in exchange_set order, optionally followed by
 * the remaining intracellular fluxes.
 */
inline Dataset build_dataset(const MetabolicNetwork& net, const GridSpec& spec, bool include_remaining,
                             unsigned workers = worker_count()) {
  if (net.manipulatable_set.size() != 2)
    throw ValidationError("build_dataset: grid sweep expects exactly two manipulatable fluxes");
  spec.validate(net.upper_bounds[net.exchange_set.front()]);
  const auto pts = generate_grid(spec);
  std::vector<FluxSolution> sols(pts.size());
  parallel_for(
      pts.size(),
      [&](std::size_t i) {
        try {
          sols[i] = solve_fba(net, pts[i]);
        } catch (const LpIterationLimit& e) {
          throw NumericalError(std::string(e.what()) + " at grid point (" + format_double(pts[i][0]) + ", " +
                               format_double(pts[i][1]) + ")");
        }
      },
      workers);

  Dataset ds;
  for (int i : net.manipulatable_set) ds.feature_names.push_back(net.flux_names[i]);
  for (int i : net.exchange_set) ds.label_names.push_back(exchange_label(net, i));
  const auto remaining = net.remaining_set();
  if (include_remaining)
    for (int i : remaining) ds.label_names.push_back(net.flux_names[i]);
  ds.provenance = "network=" + network_hash(net) + " grid=" + spec.describe() + " tiebreak=parsimonious";

  std::set<std::pair<double, double>> seen;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!sols[i].optimal()) {
      ds.infeasible.push_back({pts[i], sols[i].status});
      continue;
    }
    if (seen.insert({pts[i][0], pts[i][1]}).second) keep.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(keep.size());
  ds.features.resize(n, 2);
  ds.labels.resize(n, static_cast<Eigen::Index>(ds.label_names.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& s = sols[keep[r]];
    ds.features.row(r) = pts[keep[r]].transpose();
    ds.labels.row(r).head(s.v_ext.size()) = s.v_ext.transpose();
    if (include_remaining)
      for (std::size_t k = 0; k < remaining.size(); ++k)
        ds.labels(r, s.v_ext.size() + static_cast<Eigen::Index>(k)) = s.v_full[remaining[k]];
  }
  return ds;
}

// Dataset CSV: one "# ..." provenance line, a header row, then numeric rows.

inline void write_dataset_csv(const Dataset& ds, std::ostream& os) {
  os << "# " << ds.provenance << '\n';
  std::vector<std::string> header = ds.feature_names;
  header.insert(header.end(), ds.label_names.begin(), ds.label_names.end());
  write_csv_header(os, header);
  std::vector<double> row(header.size());
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    for (Eigen::Index c = 0; c < ds.features.cols(); ++c) row[c] = ds.features(r, c);
    for (Eigen::Index c = 0; c < ds.labels.cols(); ++c) row[ds.features.cols() + c] = ds.labels(r, c);
    write_csv_row(os, row);
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  write_dataset_csv(ds, os);
}

/// Infeasible sidecar: V4,V6,status.
inline void save_infeasible_log(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  std::vector<std::string> header = ds.feature_names;
  header.push_back("status");
  write_csv_header(os, header);
  for (const auto& p : ds.infeasible) {
    for (Eigen::Index c = 0; c < p.v_man.size(); ++c) os << format_double(p.v_man[c]) << ',';
    os << to_string(p.status) << '\n';
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError(where + ": not a number '" + s + "'");
  return v;
}

/// Leading header columns up to the first exchange label ("q_*" or "mu") are features.
inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open dataset '" + path + "'");
  Dataset ds;
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (ds.provenance.empty()) ds.provenance = line.substr(line.find_first_not_of("# "));
      continue;
    }
    auto cells = split_csv_line(line);
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                       " columns");
    std::vector<double> vals;
    for (const auto& c : cells) vals.push_back(parse_number(c, path + ":" + std::to_string(lineno)));
    rows.push_back(std::move(vals));
  }
  if (header.empty()) throw ParseError(path + ": missing header row");
  std::size_t nf = 0;
  while (nf < header.size() && header[nf].rfind("q_", 0) != 0 && header[nf] != "mu") ++nf;
  if (nf == 0 || nf == header.size()) throw ParseError(path + ": cannot identify feature/label columns");
  ds.feature_names.assign(header.begin(), header.begin() + static_cast<long>(nf));
  ds.label_names.assign(header.begin() + static_cast<long>(nf), header.end());
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.features.resize(n, static_cast<Eigen::Index>(nf));
  ds.labels.resize(n, static_cast<Eigen::Index>(header.size() - nf));
  for (Eigen::Index r = 0; r < n; ++r)
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c < nf)
        ds.features(r, static_cast<Eigen::Index>(c)) = rows[r][c];
      else
        ds.labels(r, static_cast<Eigen::Index>(c - nf)) = rows[r][c];
    }
  return ds;
}

struct YieldPoint {
  double v4, v6, y_f, y_g, y_bio;
};

struct YieldTable {
  std::vector<YieldPoint> points;
  int omitted_zero_uptake = 0;
};

/// Uptake-normalized yields of F, G and biomass per dataset row.
inline YieldTable yield_space(const Dataset& ds) {
  YieldTable t;
  if (ds.rows() == 0) return t;
  const int a = ds.label_index("q_A"), f = ds.label_index("q_F"), g = ds.label_index("q_G"), mu = ds.label_index("mu");
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    const double uptake = ds.labels(r, a);
    if (uptake == 0.0) {
      ++t.omitted_zero_uptake;
      continue;
    }
    t.points.push_back({ds.features(r, 0), ds.features(r, 1), ds.labels(r, f) / uptake, ds.labels(r, g) / uptake,
                        ds.labels(r, mu) / uptake});
  }
  return t;
}

inline void save_yield_space(const YieldTable& t, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  write_csv_header(os, {"V4", "V6", "Y_F", "Y_G", "Y_bio"});
  for (const auto& p : t.points) write_csv_row(os, {p.v4, p.v6, p.y_f, p.y_g, p.y_bio});
}

}  // namespace fluxctl
