// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fluxctl/cli.hpp"
#include "oracles.hpp"

using namespace fluxctl;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

const Dataset& dataset() {
  static const Dataset ds = build_dataset(build_canonical_network(), GridSpec::uniform(), false, 1);
  return ds;
}

const FitResult& fit() {
  static const FitResult f = fit_surrogate(dataset(), SplitSpec{}, TrainConfig{});
  return f;
}

const SurrogateModel& model() { return fit().model; }

ExtracellularState batch_z0() { return (ExtracellularState() << 120, 0, 0, 0, 0.001).finished(); }

Verdict fba_oracle() {
  const auto net = build_canonical_network();
  const auto spec = GridSpec::uniform();
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int points = 0, failed = 0;
  for (const auto& v : generate_grid(spec)) {
    const auto sol = solve_fba(net, v);
    ++points;
    if (!sol.optimal()) {
      ++failed;
      continue;
    }
    const auto cf = oracle::canonical_closed_form(v[0], v[1]);
    worst = std::max({worst, std::abs(sol.v_full[canonical::Vext5] - cf.mu),
                      std::abs(sol.v_full[canonical::Vext3] - cf.q_F), std::abs(sol.v_full[canonical::Vext4] - cf.q_G),
                      std::abs(sol.v_full[canonical::Vext1] - cf.q_A), std::abs(sol.v_full[canonical::Vext2] - cf.q_D)});
  }
  const double secs = seconds_since(t0);
  return {points == 2601 && failed == 0 && worst <= 1e-8 && secs < 5.0,
          std::to_string(points) + " points, max error " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Verdict lp_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nvars(1, 6);
  int checked = 0;
  double worst = 0.0;
  bool statuses_ok = true;
  while (checked < 200) {
    const int n = nvars(rng);
    const int m = std::uniform_int_distribution<int>(0, std::min(4, n))(rng);
    const auto lp = oracle::random_bounded_lp(rng, n, m);
    if (m > 0 && Eigen::FullPivLU<Eigen::MatrixXd>(lp.eq_matrix).rank() < m) continue;
    double best = -kInf;
    for (const auto& x : oracle::enumerate_vertices(lp)) best = std::max(best, lp.objective.dot(x));
    const auto sol = solve_lp(lp);
    if (sol.status != LpStatus::Optimal) statuses_ok = false;
    else worst = std::max(worst, std::abs(sol.objective_value - best));
    ++checked;
  }
  return {statuses_ok && worst <= 1e-8, std::to_string(checked) + " instances, max objective gap " + fmt(worst)};
}

Verdict surrogate_quality() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& f = fit();
  const double secs = seconds_since(t0);
  const auto& names = f.model.metadata.label_names;
  const Dataset& test = f.split.test;
  const Eigen::MatrixXd pred = f.model.predict_rows(test.features);
  bool ok = secs < 60.0;
  double worst_r2 = 1.0;
  std::string detail;
  for (Eigen::Index j = 0; j < test.labels.cols(); ++j) {
    const auto col = test.labels.col(j);
    const double sd = std::sqrt((col.array() - col.mean()).square().mean());
    const bool constant = is_constant_column(sd, col.mean());
    if (constant) {
      // R² is undefined without variance; require the constant to be reproduced instead.
      const double err = (pred.col(j) - col).cwiseAbs().maxCoeff();
      ok = ok && err <= 1e-6;
      detail += names[static_cast<std::size_t>(j)] + " constant (max error " + fmt(err) + "), ";
      continue;
    }
    worst_r2 = std::min(worst_r2, f.test_r2[j]);
    ok = ok && f.test_r2[j] >= 0.999;
  }
  return {ok, detail + "min R2 " + fmt(worst_r2) + ", " + fmt(secs) + " s"};
}

double backprop_error(const SurrogateModel& m, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(16, m.input_dim()), y(16, m.output_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
  Eigen::VectorXd grad;
  loss_and_gradient(m, x, y, &grad);
  const Eigen::VectorXd p = m.flat_params();
  const double h = 1e-5;
  Eigen::VectorXd fd(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    SurrogateModel a = m, b = m;
    Eigen::VectorXd pp = p, pm = p;
    pp[k] += h;
    pm[k] -= h;
    a.set_flat_params(pp);
    b.set_flat_params(pm);
    fd[k] = (loss_and_gradient(a, x, y, nullptr) - loss_and_gradient(b, x, y, nullptr)) / (2 * h);
  }
  return (grad - fd).cwiseAbs().maxCoeff() / std::max(grad.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff());
}

Verdict gradient_checks() {
  Rng init_rng(7);
  const double nn_fresh = backprop_error(init_model(2, 5, {4}, init_rng), 11);
  const double nn_trained = backprop_error(model(), 12);

  OcProblem p;
  p.model = &model();
  p.r_G_target = 0.4;
  double ocp = 0.0;
  for (std::uint64_t seed : {3u, 4u}) {
    Rng rng(seed);
    ControlSchedule s = ControlSchedule::uniform(p.t0, p.t_f, p.intervals());
    for (int k = 0; k < s.intervals(); ++k) {
      s.values(k, 0) = 1 + 8 * rng.uniform();
      s.values(k, 1) = (0.1 + 0.8 * rng.uniform()) * 0.5 * s.values(k, 0);
    }
    ocp = std::max(ocp, check_gradient(p, s, 0.3, 10.0));
  }
  const double worst = std::max({nn_fresh, nn_trained, ocp});
  return {worst < 1e-4, "backprop " + fmt(std::max(nn_fresh, nn_trained)) + ", adjoint " + fmt(ocp)};
}

Verdict simulator() {
  const auto& m = model();
  const auto probe = ControlSchedule::uniform(0, 2, 1);
  auto run = [&](double h) { return simulate(m, batch_z0(), probe, KineticParams{}, {h}).final_state(); };
  const ExtracellularState z1 = run(0.04), z2 = run(0.02), z3 = run(0.01);
  const double ratio = (z1 - z2).norm() / (z2 - z3).norm();

  ControlSchedule batch;
  batch.t_grid = {0.0, 2.25, 9.0};
  batch.values.resize(2, 2);
  batch.values << 0.0, 0.0, 10.0, 2.5;
  const auto tr = simulate(m, batch_z0(), batch, KineticParams{});
  double drift = 0.0;
  for (const auto& z : tr.states) drift = std::max(drift, std::abs(carbon_total(z) - carbon_total(batch_z0())));
  const double rel = drift / batch_z0()[kA];
  return {ratio >= 12 && ratio <= 20 && rel < 0.005, "halving ratio " + fmt(ratio) + ", carbon drift " + fmt(100 * rel) + " %"};
}

Verdict scenarios() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (double target : {0.2, 0.3, 0.4, 0.6, 0.7, 0.8}) {
    OcProblem p;
    p.model = &model();
    p.r_G_target = target;
    const auto sol = solve_ocp(p);
    const double early = mean_v4(sol.schedule, 0.0, 1.5), late = mean_v4(sol.schedule, 3.0, 9.0);
    const bool pass = sol.converged && std::abs(sol.r_G - target) <= 0.01 && early < 1.0 && late > 9.0;
    ok = ok && pass;
    detail += fmt(target) + ":" + (pass ? "ok" : "bad") + "(J " + fmt(sol.J) + ") ";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 600.0, detail + fmt(secs) + " s"};
}

Verdict mpc_mismatch() {
  MpcConfig cfg;
  cfg.mismatch = 0.97;
  const Plant plant = make_plant(cfg.kin, cfg.mismatch);
  const auto nominal = nominal_open_loop(model(), cfg);
  const auto baseline = compare_open_loop(model(), plant, nominal.schedule, cfg);
  const auto closed = run_mpc(model(), plant, cfg);
  const bool ok = std::abs(closed.r_G - 0.5) <= 0.02 && closed.product_final > baseline.product_final &&
                  closed.A_final < baseline.A_final;
  return {ok, "r_G " + fmt(closed.r_G) + ", F+G " + fmt(closed.product_final) + " vs " + fmt(baseline.product_final) +
                  ", A_ext " + fmt(closed.A_final) + " vs " + fmt(baseline.A_final)};
}

Verdict mpc_nominal() {
  MpcConfig cfg;
  cfg.mismatch = 1.0;
  const auto nominal = nominal_open_loop(model(), cfg);
  const auto closed = run_mpc(model(), cfg);
  const double rel = std::abs(closed.product_final - nominal.J) / nominal.J;
  return {rel <= 0.01, "J " + fmt(closed.product_final) + " vs " + fmt(nominal.J) + ", relative gap " + fmt(rel)};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Verdict determinism() {
  const std::string configs = FLUXCTL_CONFIG_DIR;
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"gen-data", "gen_data.json"}, {"train", "train.json"},    {"fba", "fba.json"},
      {"yield-space", "yield_space.json"}, {"simulate", "simulate.json"}, {"optimize", "optimize_S1.json"},
      {"mpc", "mpc.json"}};
  std::vector<fs::path> dirs;
  for (const char* tag : {"a", "b"}) {
    const fs::path dir = fs::temp_directory_path() / (std::string("fluxctl_acceptance_") + tag);
    fs::remove_all(dir);
    for (const auto& [cmd, cfg] : steps) {
      const auto r = cli::run_command(cmd, {configs + "/" + cfg, dir.string(), std::nullopt});
      if (r.exit_code != 0) return {false, r.error_line};
    }
    dirs.push_back(dir);
  }
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const std::string name = entry.path().filename().string();
    if (name.find(".manifest.json") != std::string::npos) continue;
    if (!fs::exists(dirs[1] / name) || read_bytes(entry.path()) != read_bytes(dirs[1] / name))
      return {false, name + " differs between runs"};
    ++compared;
  }
  return {compared > 0, std::to_string(compared) + " output files byte-identical"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"FBA closed-form equivalence", fba_oracle},
      {"LP vertex-enumeration equivalence", lp_oracle},
      {"surrogate test-set quality", surrogate_quality},
      {"gradient checks", gradient_checks},
      {"simulator order and carbon closure", simulator},
      {"scenario suite", scenarios},
      {"MPC under plant mismatch", mpc_mismatch},
      {"MPC without mismatch", mpc_nominal},
      {"end-to-end determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
