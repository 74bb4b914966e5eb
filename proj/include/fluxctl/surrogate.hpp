#pragma once

/**
 * @file
 * @brief Feedforward network surrogate of the FBA map v_man -> v_ext.
 *
 * ReLU hidden layers, linear output head, z-score normalization on both
 * sides. Training is mini-batch Adam on the mean squared error of the
 * normalized outputs, keeping the parameter snapshot with the lowest
 * validation loss.
 */

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"
#include "fba.hpp"

namespace fluxctl {

/// Small deterministic RNG helpers. Implemented here rather than with
/// <random> distributions so that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9E3779B97F4A7C15ULL) {}

  std::uint64_t next() {  // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal() {
    const double u1 = 1.0 - uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t state_;
};

/// Columns whose standard deviation is below this fraction of their magnitude
/// are treated as constant (zero variance).
inline constexpr double kConstantColumnRelTol = 1e-8;

inline bool is_constant_column(double stddev, double mean) {
  return !(stddev > kConstantColumnRelTol * std::max(1.0, std::abs(mean)));
}

struct Normalization {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  /// Column mean and population standard deviation; constant columns get scale 1.
  static Normalization fit(const Eigen::MatrixXd& data) {
    Normalization n;
    n.mean = data.colwise().mean().transpose();
    n.scale = ((data.rowwise() - n.mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
    for (Eigen::Index i = 0; i < n.scale.size(); ++i)
      if (is_constant_column(n.scale[i], n.mean[i])) n.scale[i] = 1.0;
    return n;
  }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& data) const {
    return (data.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

struct SplitSpec {
  double test_fraction = 0.15;
  double train_fraction_of_rest = 0.80;
  std::uint64_t shuffle_seed = 42;

  void validate() const {
    if (!(test_fraction > 0 && test_fraction < 1 && train_fraction_of_rest > 0 && train_fraction_of_rest < 1))
      throw ValidationError("split fractions must lie in (0, 1)");
  }
};

struct DatasetSplit {
  Dataset train, val, test;
};

/// Floor-rounded sizes: test = floor(f_test N), train = floor(f_train (N - test)), val = rest.
inline DatasetSplit split_dataset(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(ds.rows());
  if (n < 3) throw ValidationError("split_dataset: need at least 3 rows, got " + std::to_string(n));
  const auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(n) + 1e-9));
  const std::size_t rest = n - n_test;
  const auto n_train =
      static_cast<std::size_t>(std::floor(spec.train_fraction_of_rest * static_cast<double>(rest) + 1e-9));
  if (n_test == 0 || n_train == 0 || n_train == rest)
    throw ValidationError("split_dataset: " + std::to_string(n) + " rows leave an empty split");
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(spec.shuffle_seed);
  rng.shuffle(perm);
  auto slice = [&](std::size_t b, std::size_t e) {
    return std::vector<Eigen::Index>(perm.begin() + static_cast<long>(b), perm.begin() + static_cast<long>(e));
  };
  return {ds.subset(slice(n_test, n_test + n_train)), ds.subset(slice(n_test + n_train, n)),
          ds.subset(slice(0, n_test))};
}

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 64;
  double learning_rate = 1e-2;
  std::uint64_t seed = 42;
  std::vector<int> hidden = {4};
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  int epochs = 0;
  int batch_size = 0;
  double learning_rate = 0.0;
  double test_fraction = 0.0;
  double train_fraction_of_rest = 0.0;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> train_rmse;  ///< per output, physical units
  std::vector<double> test_r2;     ///< per output, NaN when undefined
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;
};

struct ChecksumRow {
  Eigen::VectorXd input;
  Eigen::VectorXd expected;
  double tolerance = 1e-10;
};

struct SurrogateModel {
  std::vector<int> layer_dims;
  std::vector<Eigen::MatrixXd> weights;  ///< layer l maps dims[l] -> dims[l+1]
  std::vector<Eigen::VectorXd> biases;
  Normalization input_norm, output_norm;
  TrainingMetadata metadata;
  std::vector<ChecksumRow> checksum_rows;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }

  void validate() const {
    if (layer_dims.size() < 2) throw ValidationError("surrogate: need at least input and output layers");
    if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size())
      throw ValidationError("surrogate: layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l] ||
          biases[l].size() != layer_dims[l + 1])
        throw ValidationError("surrogate: layer " + std::to_string(l) + " dims do not chain");
    if (input_norm.mean.size() != input_dim() || input_norm.scale.size() != input_dim() ||
        output_norm.mean.size() != output_dim() || output_norm.scale.size() != output_dim())
      throw ValidationError("surrogate: normalization dims");
    if ((input_norm.scale.array() <= 0).any() || (output_norm.scale.array() <= 0).any())
      throw ValidationError("surrogate: normalization scales must be positive");
  }

  /// Forward pass on normalized inputs (one sample per column).
  Eigen::MatrixXd forward_normalized(const Eigen::MatrixXd& xn) const {
    Eigen::MatrixXd a = xn;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      a = (weights[l] * a).colwise() + biases[l];
      if (l + 1 < weights.size()) a = a.cwiseMax(0.0);
    }
    return a;
  }

  Eigen::VectorXd predict(const Eigen::VectorXd& v_man) const {
    if (v_man.size() != input_dim())
      throw ValidationError("predict: input has " + std::to_string(v_man.size()) + " entries, expected " +
                            std::to_string(input_dim()));
    const Eigen::VectorXd xn = (v_man - input_norm.mean).cwiseQuotient(input_norm.scale);
    const Eigen::VectorXd yn = forward_normalized(xn);
    return yn.cwiseProduct(output_norm.scale) + output_norm.mean;
  }

  /// Prediction plus d(output)/d(input).
  Eigen::VectorXd predict(const Eigen::VectorXd& v_man, Eigen::MatrixXd& jacobian) const {
    if (v_man.size() != input_dim()) throw ValidationError("predict: dimension mismatch");
    Eigen::VectorXd a = (v_man - input_norm.mean).cwiseQuotient(input_norm.scale);
    Eigen::MatrixXd J = input_norm.scale.cwiseInverse().asDiagonal();
    for (std::size_t l = 0; l < weights.size(); ++l) {
      a = weights[l] * a + biases[l];
      J = weights[l] * J;
      if (l + 1 < weights.size()) {
        for (Eigen::Index i = 0; i < a.size(); ++i)
          if (a[i] <= 0.0) a[i] = 0.0, J.row(i).setZero();
      }
    }
    jacobian = output_norm.scale.asDiagonal() * J;
    return a.cwiseProduct(output_norm.scale) + output_norm.mean;
  }

  Eigen::MatrixXd predict_rows(const Eigen::MatrixXd& features) const {
    const Eigen::MatrixXd xn = input_norm.apply(features);
    Eigen::MatrixXd yn = forward_normalized(xn.transpose()).transpose();
    return (yn.array().rowwise() * output_norm.scale.transpose().array()).rowwise() +
           output_norm.mean.transpose().array();
  }

  int num_params() const {
    int n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<int>(weights[l].size() + biases[l].size());
    return n;
  }

  Eigen::VectorXd flat_params() const {
    Eigen::VectorXd p(num_params());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      p.segment(k, weights[l].size()) = weights[l].reshaped();
      k += weights[l].size();
      p.segment(k, biases[l].size()) = biases[l];
      k += biases[l].size();
    }
    return p;
  }

  void set_flat_params(const Eigen::VectorXd& p) {
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l].reshaped() = p.segment(k, weights[l].size());
      k += weights[l].size();
      biases[l] = p.segment(k, biases[l].size());
      k += biases[l].size();
    }
  }

  /// Largest deviation from the recorded checksum outputs; throws IntegrityError past tolerance.
  void verify_checksums() const {
    for (std::size_t i = 0; i < checksum_rows.size(); ++i) {
      const auto& row = checksum_rows[i];
      const double err = (predict(row.input) - row.expected).cwiseAbs().maxCoeff();
      if (!(err <= row.tolerance))
        throw IntegrityError("surrogate: checksum row " + std::to_string(i) + " deviates by " + format_double(err));
    }
  }
};

/// Fresh network with He-normal hidden weights and small positive biases.
inline SurrogateModel init_model(int n_in, int n_out, const std::vector<int>& hidden, Rng& rng) {
  SurrogateModel m;
  m.layer_dims.push_back(n_in);
  m.layer_dims.insert(m.layer_dims.end(), hidden.begin(), hidden.end());
  m.layer_dims.push_back(n_out);
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    const int fan_in = m.layer_dims[l], fan_out = m.layer_dims[l + 1];
    const double sd = std::sqrt((l + 2 < m.layer_dims.size() ? 2.0 : 1.0) / fan_in);
    Eigen::MatrixXd W(fan_out, fan_in);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = sd * rng.normal();
    m.weights.push_back(W);
    m.biases.push_back(Eigen::VectorXd::Constant(fan_out, l + 2 < m.layer_dims.size() ? 0.1 : 0.0));
  }
  m.input_norm = {Eigen::VectorXd::Zero(n_in), Eigen::VectorXd::Ones(n_in)};
  m.output_norm = {Eigen::VectorXd::Zero(n_out), Eigen::VectorXd::Ones(n_out)};
  return m;
}

/**
 * Mean squared error over all entries of a normalized batch (samples are
 * rows) and its gradient with respect to flat_params().
 */
inline double loss_and_gradient(const SurrogateModel& m, const Eigen::MatrixXd& xn, const Eigen::MatrixXd& yn,
                                Eigen::VectorXd* grad) {
  const std::size_t L = m.weights.size();
  std::vector<Eigen::MatrixXd> acts(L + 1);  // column-major samples
  acts[0] = xn.transpose();
  for (std::size_t l = 0; l < L; ++l) {
    acts[l + 1] = (m.weights[l] * acts[l]).colwise() + m.biases[l];
    if (l + 1 < L) acts[l + 1] = acts[l + 1].cwiseMax(0.0);
  }
  const Eigen::MatrixXd diff = acts[L] - yn.transpose();
  const double count = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / count;
  if (!grad) return loss;

  grad->resize(m.num_params());
  std::vector<Eigen::Index> offsets(L);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < L; ++l) offsets[l] = k, k += m.weights[l].size() + m.biases[l].size();

  Eigen::MatrixXd delta = (2.0 / count) * diff;
  for (std::size_t l = L; l-- > 0;) {
    const Eigen::MatrixXd gW = delta * acts[l].transpose();
    const Eigen::VectorXd gb = delta.rowwise().sum();
    grad->segment(offsets[l], gW.size()) = gW.reshaped();
    grad->segment(offsets[l] + gW.size(), gb.size()) = gb;
    if (l > 0) {
      delta = m.weights[l].transpose() * delta;
      delta = delta.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return loss;
}

/// Returns the snapshot with the best validation loss seen over all epochs.
inline SurrogateModel train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
  if (train_set.rows() == 0 || val_set.rows() == 0) throw ValidationError("train: empty train or validation set");
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || !(cfg.learning_rate > 0))
    throw ValidationError("train: epochs, batch size and learning rate must be positive");
  const auto n_in = static_cast<int>(train_set.features.cols());
  const auto n_out = static_cast<int>(train_set.labels.cols());
  Rng rng(cfg.seed);
  SurrogateModel model = init_model(n_in, n_out, cfg.hidden, rng);
  model.input_norm = Normalization::fit(train_set.features);
  model.output_norm = Normalization::fit(train_set.labels);

  const Eigen::MatrixXd xt = model.input_norm.apply(train_set.features);
  const Eigen::MatrixXd yt = model.output_norm.apply(train_set.labels);
  const Eigen::MatrixXd xv = model.input_norm.apply(val_set.features);
  const Eigen::MatrixXd yv = model.output_norm.apply(val_set.labels);

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Eigen::VectorXd params = model.flat_params();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(params.size()), m2 = m1, grad;
  Eigen::VectorXd best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  long step = 0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(xt.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  double epoch_loss = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const auto rows = static_cast<Eigen::Index>(e - b);
      Eigen::MatrixXd xb(rows, n_in), yb(rows, n_out);
      for (Eigen::Index r = 0; r < rows; ++r) {
        xb.row(r) = xt.row(order[b + static_cast<std::size_t>(r)]);
        yb.row(r) = yt.row(order[b + static_cast<std::size_t>(r)]);
      }
      model.set_flat_params(params);
      const double loss = loss_and_gradient(model, xb, yb, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             " (learning rate " + format_double(cfg.learning_rate) + " may be too large)");
      epoch_loss += loss * static_cast<double>(rows);
      ++step;
      m1 = beta1 * m1 + (1 - beta1) * grad;
      m2 = beta2 * m2 + (1 - beta2) * grad.cwiseAbs2();
      const double c1 = 1 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1 - std::pow(beta2, static_cast<double>(step));
      params.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    epoch_loss /= static_cast<double>(order.size());
    model.set_flat_params(params);
    const double val = loss_and_gradient(model, xv, yv, nullptr);
    if (!std::isfinite(val)) throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    if (val < best_val) best_val = val, best = params, best_epoch = epoch;
  }
  model.set_flat_params(best);

  auto& md = model.metadata;
  md.seed = cfg.seed;
  md.epochs = cfg.epochs;
  md.batch_size = cfg.batch_size;
  md.learning_rate = cfg.learning_rate;
  md.best_epoch = best_epoch;
  md.best_val_loss = best_val;
  md.final_train_loss = epoch_loss;
  md.feature_names = train_set.feature_names;
  md.label_names = train_set.label_names;
  const Eigen::MatrixXd resid = model.predict_rows(train_set.features) - train_set.labels;
  md.train_rmse.resize(static_cast<std::size_t>(n_out));
  for (int j = 0; j < n_out; ++j) md.train_rmse[static_cast<std::size_t>(j)] = std::sqrt(resid.col(j).squaredNorm() / static_cast<double>(resid.rows()));

  // Checksum rows: four validation inputs spread over the set.
  const Eigen::Index nv = val_set.rows();
  for (int i = 0; i < 4; ++i) {
    const Eigen::Index r = std::min<Eigen::Index>(nv - 1, (nv - 1) * i / 3);
    ChecksumRow row;
    row.input = val_set.features.row(r).transpose();
    row.expected = model.predict(row.input);
    model.checksum_rows.push_back(row);
  }
  return model;
}

/// Per-output coefficient of determination; NaN where the labels have zero
/// variance (up to kConstantColumnRelTol).
inline Eigen::VectorXd r_squared(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& labels) {
  if (labels.rows() == 0) throw ValidationError("r_squared: empty set");
  Eigen::VectorXd r2(labels.cols());
  for (Eigen::Index j = 0; j < labels.cols(); ++j) {
    const double mean = labels.col(j).mean();
    const double ss_tot = (labels.col(j).array() - mean).square().sum();
    const double ss_res = (labels.col(j) - predictions.col(j)).squaredNorm();
    const double sd = std::sqrt(ss_tot / static_cast<double>(labels.rows()));
    r2[j] = is_constant_column(sd, mean) ? std::numeric_limits<double>::quiet_NaN() : 1.0 - ss_res / ss_tot;
  }
  return r2;
}

inline Eigen::VectorXd r_squared(const SurrogateModel& model, const Dataset& test) {
  return r_squared(model.predict_rows(test.features), test.labels);
}

struct FitResult {
  SurrogateModel model;
  DatasetSplit split;
  Eigen::VectorXd test_r2;
};

/// Split, train, score on the held-out test set, and record everything in the metadata.
inline FitResult fit_surrogate(const Dataset& ds, const SplitSpec& split, const TrainConfig& cfg) {
  FitResult out;
  out.split = split_dataset(ds, split);
  out.model = train(out.split.train, out.split.val, cfg);
  out.test_r2 = r_squared(out.model, out.split.test);
  out.model.metadata.test_fraction = split.test_fraction;
  out.model.metadata.train_fraction_of_rest = split.train_fraction_of_rest;
  out.model.metadata.test_r2.assign(out.test_r2.data(), out.test_r2.data() + out.test_r2.size());
  return out;
}

// Model file (JSON). Weights are row-major per layer.

inline nlohmann::json nan_to_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

inline nlohmann::json model_to_json(const SurrogateModel& m) {
  using nlohmann::json;
  json j;
  j["layer_dims"] = m.layer_dims;
  json ws = json::array(), bs = json::array();
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    std::vector<double> w;
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) w.push_back(m.weights[l](r, c));
    ws.push_back(w);
    bs.push_back(std::vector<double>(m.biases[l].data(), m.biases[l].data() + m.biases[l].size()));
  }
  j["weights"] = ws;
  j["biases"] = bs;
  auto norm = [](const Normalization& n) {
    return json{{"mean", std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size())},
                {"scale", std::vector<double>(n.scale.data(), n.scale.data() + n.scale.size())}};
  };
  j["input_norm"] = norm(m.input_norm);
  j["output_norm"] = norm(m.output_norm);
  const auto& md = m.metadata;
  json r2 = json::array();
  for (double v : md.test_r2) r2.push_back(nan_to_null(v));
  j["metadata"] = {{"seed", md.seed},
                   {"epochs", md.epochs},
                   {"batch_size", md.batch_size},
                   {"learning_rate", md.learning_rate},
                   {"test_fraction", md.test_fraction},
                   {"train_fraction_of_rest", md.train_fraction_of_rest},
                   {"best_epoch", md.best_epoch},
                   {"best_val_loss", nan_to_null(md.best_val_loss)},
                   {"final_train_loss", nan_to_null(md.final_train_loss)},
                   {"train_rmse", md.train_rmse},
                   {"test_r2", r2},
                   {"feature_names", md.feature_names},
                   {"label_names", md.label_names}};
  json rows = json::array();
  for (const auto& r : m.checksum_rows)
    rows.push_back({{"input", std::vector<double>(r.input.data(), r.input.data() + r.input.size())},
                    {"expected", std::vector<double>(r.expected.data(), r.expected.data() + r.expected.size())},
                    {"tolerance", r.tolerance}});
  j["checksum_rows"] = rows;
  return j;
}

inline Eigen::VectorXd json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline double json_number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

/// Parses and validates a model; checksum rows are re-evaluated (IntegrityError on mismatch).
inline SurrogateModel model_from_json(const nlohmann::json& j) {
  SurrogateModel m;
  try {
    m.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (ws.size() + 1 != m.layer_dims.size() || bs.size() + 1 != m.layer_dims.size())
      throw ParseError("surrogate: weight/bias layer count does not match layer_dims");
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
      const auto w = ws[l].get<std::vector<double>>();
      const int rows = m.layer_dims[l + 1], cols = m.layer_dims[l];
      if (static_cast<int>(w.size()) != rows * cols) throw ParseError("surrogate: weight layer " + std::to_string(l) + " has wrong size");
      Eigen::MatrixXd W(rows, cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) W(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      m.weights.push_back(W);
      m.biases.push_back(json_vector(bs[l]));
    }
    m.input_norm = {json_vector(j.at("input_norm").at("mean")), json_vector(j.at("input_norm").at("scale"))};
    m.output_norm = {json_vector(j.at("output_norm").at("mean")), json_vector(j.at("output_norm").at("scale"))};
    if (j.contains("metadata")) {
      const auto& md = j.at("metadata");
      auto& out = m.metadata;
      out.seed = md.value("seed", std::uint64_t{0});
      out.epochs = md.value("epochs", 0);
      out.batch_size = md.value("batch_size", 0);
      out.learning_rate = md.value("learning_rate", 0.0);
      out.test_fraction = md.value("test_fraction", 0.0);
      out.train_fraction_of_rest = md.value("train_fraction_of_rest", 0.0);
      out.best_epoch = md.value("best_epoch", -1);
      if (md.contains("best_val_loss")) out.best_val_loss = json_number_or_nan(md.at("best_val_loss"));
      if (md.contains("final_train_loss")) out.final_train_loss = json_number_or_nan(md.at("final_train_loss"));
      if (md.contains("train_rmse")) out.train_rmse = md.at("train_rmse").get<std::vector<double>>();
      if (md.contains("test_r2"))
        for (const auto& v : md.at("test_r2")) out.test_r2.push_back(json_number_or_nan(v));
      if (md.contains("feature_names")) out.feature_names = md.at("feature_names").get<std::vector<std::string>>();
      if (md.contains("label_names")) out.label_names = md.at("label_names").get<std::vector<std::string>>();
    }
    for (const auto& r : j.at("checksum_rows"))
      m.checksum_rows.push_back({json_vector(r.at("input")), json_vector(r.at("expected")), r.at("tolerance").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("surrogate: ") + e.what());
  }
  m.validate();
  m.verify_checksums();
  return m;
}

inline void save_model(const SurrogateModel& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open '" + path + "' for writing");
  os << model_to_json(m).dump(2) << '\n';
}

inline SurrogateModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("model '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace fluxctl
