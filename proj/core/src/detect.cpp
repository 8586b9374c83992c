#include "repdetect/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "repdetect/error.hpp"

namespace repdetect {

using nlohmann::json;

json LogisticHyperparams::to_json() const {
  return {{"l2", l2}, {"max_iters", max_iters}, {"tolerance", tolerance}, {"seed", seed},
          {"standardize", standardize}};
}

LogisticHyperparams LogisticHyperparams::from_json(const json& j) {
  LogisticHyperparams hp;
  hp.l2 = j.at("l2").get<double>();
  hp.max_iters = j.at("max_iters").get<int>();
  hp.tolerance = j.at("tolerance").get<double>();
  hp.seed = j.at("seed").get<std::uint64_t>();
  hp.standardize = j.at("standardize").get<bool>();
  return hp;
}

json LogisticModel::to_json() const {
  return {{"weights", weights},
          {"bias", bias},
          {"feature_means", feature_means},
          {"feature_stds", feature_stds},
          {"hyperparams", hyperparams.to_json()},
          {"iterations", iterations},
          {"final_loss", final_loss},
          {"gradient_inf_norm", gradient_inf_norm}};
}

LogisticModel LogisticModel::from_json(const json& j) {
  LogisticModel m;
  try {
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.feature_means = j.at("feature_means").get<std::vector<double>>();
    m.feature_stds = j.at("feature_stds").get<std::vector<double>>();
    m.hyperparams = LogisticHyperparams::from_json(j.at("hyperparams"));
    m.iterations = j.value("iterations", 0);
    m.final_loss = j.value("final_loss", 0.0);
    m.gradient_inf_norm = j.value("gradient_inf_norm", 0.0);
  } catch (const json::exception& e) {
    throw ParseError(std::string("detect: malformed model: ") + e.what());
  }
  if (m.feature_means.size() != m.weights.size() || m.feature_stds.size() != m.weights.size()) {
    throw ParseError("detect: model vectors disagree in length");
  }
  for (double s : m.feature_stds) {
    if (!(s > 0.0)) throw ParseError("detect: model has a non-positive feature std");
  }
  return m;
}

ColumnStats column_stats(const MatrixD& x) {
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  ColumnStats s{std::vector<double>(m, 0.0), std::vector<double>(m, 1.0)};
  if (n == 0) return s;
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    s.means[j] = mean;
    s.stds[j] = sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
  }
  return s;
}

MatrixD standardize(const MatrixD& x, const ColumnStats& stats) {
  MatrixD z(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) z(i, j) = (x(i, j) - stats.means[j]) / stats.stds[j];
  }
  return z;
}

namespace {

double sigmoid(double s) noexcept {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

double softplus(double s) noexcept { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

double logit(std::span<const double> row, std::span<const double> w, double b) noexcept {
  double s = b;
  for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * row[j];
  return s;
}

double loss_only(const MatrixD& z, std::span<const int> y, std::span<const double> w, double b,
                 double l2) {
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double s = logit(z.row(i), w, b);
    total += softplus(s) - (y[i] == 1 ? s : 0.0);
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return total / static_cast<double>(z.rows()) + 0.5 * l2 * reg;
}

double inf_norm(const Objective& o) {
  double g = std::abs(o.grad_b);
  for (double v : o.grad_w) g = std::max(g, std::abs(v));
  return g;
}

}  // namespace

Objective logistic_objective(const MatrixD& z, std::span<const int> y, std::span<const double> w,
                             double b, double l2) {
  const std::size_t n = z.rows();
  Objective o;
  o.grad_w.assign(w.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = z.row(i);
    const double s = logit(row, w, b);
    total += softplus(s) - (y[i] == 1 ? s : 0.0);
    const double r = sigmoid(s) - (y[i] == 1 ? 1.0 : 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) o.grad_w[j] += r * row[j];
    o.grad_b += r;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  double reg = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    o.grad_w[j] = o.grad_w[j] * inv_n + l2 * w[j];
    reg += w[j] * w[j];
  }
  o.grad_b *= inv_n;
  o.loss = total * inv_n + 0.5 * l2 * reg;
  return o;
}

LogisticModel train_logistic(const MatrixD& x, std::span<const int> y, const LogisticHyperparams& hp,
                             std::vector<double>* loss_trace) {
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  if (y.size() != n) throw DomainError("detect: label count does not match row count");
  if (n < 2) throw DataError("detect: need at least 2 training rows");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != 0 && y[i] != 1) throw DataError("detect: labels must be 0 or 1");
    positives += static_cast<std::size_t>(y[i]);
    for (double v : x.row(i)) {
      if (!std::isfinite(v)) throw DataError("detect: non-finite feature in row " + std::to_string(i));
    }
  }
  if (positives == 0 || positives == n) throw DataError("detect: training labels contain a single class");
  if (!(hp.l2 >= 0.0) || hp.max_iters < 0 || !(hp.tolerance > 0.0)) {
    throw DomainError("detect: invalid hyperparameters");
  }

  LogisticModel model;
  model.hyperparams = hp;
  ColumnStats stats;
  if (hp.standardize) {
    stats = column_stats(x);
  } else {
    stats = {std::vector<double>(m, 0.0), std::vector<double>(m, 1.0)};
  }
  const MatrixD z = standardize(x, stats);
  model.feature_means = stats.means;
  model.feature_stds = stats.stds;

  std::vector<double> w(m, 0.0);
  double b = 0.0;
  Objective obj = logistic_objective(z, y, w, b, hp.l2);
  if (loss_trace) loss_trace->assign(1, obj.loss);

  constexpr double kArmijo = 1e-4;
  double step = 1.0;
  int iter = 0;
  std::vector<double> w_next(m);
  while (iter < hp.max_iters && inf_norm(obj) >= hp.tolerance) {
    double g2 = obj.grad_b * obj.grad_b;
    for (double v : obj.grad_w) g2 += v * v;

    bool accepted = false;
    double b_next = b;
    double loss_next = obj.loss;
    for (int halvings = 0; halvings < 80; ++halvings) {
      for (std::size_t j = 0; j < m; ++j) w_next[j] = w[j] - step * obj.grad_w[j];
      b_next = b - step * obj.grad_b;
      loss_next = loss_only(z, y, w_next, b_next, hp.l2);
      if (loss_next <= obj.loss - kArmijo * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no representable decrease left

    Objective next = logistic_objective(z, y, w_next, b_next, hp.l2);
    // Barzilai-Borwein guess for the next trial step.
    double sy = 0.0;
    double ss = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double s = w_next[j] - w[j];
      sy += s * (next.grad_w[j] - obj.grad_w[j]);
      ss += s * s;
    }
    const double sb = b_next - b;
    sy += sb * (next.grad_b - obj.grad_b);
    ss += sb * sb;
    step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : std::min(2.0 * step, 1e10);

    w = w_next;
    b = b_next;
    obj = std::move(next);
    ++iter;
    if (loss_trace) loss_trace->push_back(obj.loss);
  }

  model.weights = std::move(w);
  model.bias = b;
  model.iterations = iter;
  model.final_loss = obj.loss;
  model.gradient_inf_norm = inf_norm(obj);
  return model;
}

double predict_proba(const LogisticModel& model, std::span<const double> x) {
  if (x.size() != model.dims()) {
    throw DomainError("detect: feature vector has " + std::to_string(x.size()) +
                      " dims, model expects " + std::to_string(model.dims()));
  }
  double s = model.bias;
  for (std::size_t j = 0; j < x.size(); ++j) {
    s += model.weights[j] * (x[j] - model.feature_means[j]) / model.feature_stds[j];
  }
  return sigmoid(s);
}

json EvalReport::to_json() const {
  return {{"detector", detector},
          {"dataset", dataset},
          {"attack_tag", attack_tag},
          {"accuracy", accuracy},
          {"tp", tp},
          {"fp", fp},
          {"tn", tn},
          {"fn", fn},
          {"seed", seed},
          {"standardized", standardized},
          {"hyperparams", hyperparams},
          {"config", config},
          {"split", {{"train", train_indices}, {"test", test_indices}}}};
}

EvalReport score_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw DomainError("detect: prediction/label length mismatch");
  if (truth.empty()) throw DataError("detect: cannot evaluate an empty set");
  EvalReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool flagged = predicted[i] == 1;
    if (truth[i] == 1) {
      (flagged ? r.tp : r.fn) += 1;
    } else {
      (flagged ? r.fp : r.tn) += 1;
    }
  }
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(truth.size());
  return r;
}

EvalReport evaluate(const LogisticModel& model, const MatrixD& x, std::span<const int> y) {
  if (x.rows() != y.size()) throw DomainError("detect: feature/label length mismatch");
  if (x.rows() == 0) throw DataError("detect: cannot evaluate an empty set");
  std::vector<int> predicted(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) predicted[i] = predict_label(model, x.row(i));
  EvalReport r = score_predictions(predicted, y);
  r.standardized = model.hyperparams.standardize;
  r.hyperparams = model.hyperparams.to_json();
  return r;
}

Split split_rows(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("detect: split fraction must be in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)), order.end());
  return s;
}

namespace {

MatrixD gather_rows(const MatrixD& x, const std::vector<std::size_t>& rows) {
  MatrixD out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

DetectionResult run_detection(const FeatureTable& features, const ExperimentConfig& config,
                              const std::string& detector_name) {
  features.check();
  const Split split = split_rows(features.rows(), config.split_fraction, config.split_seed);
  std::vector<int> y_train, y_test;
  for (std::size_t i : split.train) y_train.push_back(features.labels[i]);
  for (std::size_t i : split.test) y_test.push_back(features.labels[i]);
  const auto ones = std::count(y_train.begin(), y_train.end(), 1);
  if (ones == 0 || ones == static_cast<std::ptrdiff_t>(y_train.size())) {
    throw DataError("detect: degenerate split, training side of " + std::to_string(y_train.size()) +
                    " rows lacks a class");
  }
  if (split.test.empty()) {
    throw DataError("detect: degenerate split, test side is empty (" +
                    std::to_string(features.rows()) + " rows)");
  }
  DetectionResult out;
  out.model = train_logistic(gather_rows(features.values, split.train), y_train, config.hyperparams);
  out.report = evaluate(out.model, gather_rows(features.values, split.test), y_test);
  out.report.detector = detector_name;
  out.report.seed = config.split_seed;
  out.report.train_indices = split.train;
  out.report.test_indices = split.test;
  out.report.config = {{"split_fraction", config.split_fraction},
                       {"split_seed", config.split_seed},
                       {"columns", features.columns}};
  return out;
}

DetectionResult lm_score_detector(std::span<const double> scores, std::span<const int> labels,
                                  const ExperimentConfig& config) {
  if (scores.size() != labels.size()) throw DomainError("detect: score/label length mismatch");
  FeatureTable t;
  t.columns = {"lm_score"};
  t.values = MatrixD(scores.size(), 1, std::vector<double>(scores.begin(), scores.end()));
  t.labels.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < scores.size(); ++i) t.row_ids.push_back(std::to_string(i));
  return run_detection(t, config, "lm-baseline");
}

}  // namespace repdetect
