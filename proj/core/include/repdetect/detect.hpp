#pragma once

// Binary detector g: L2-regularized logistic regression on z-scored
// features, plus accuracy/confusion evaluation and the seeded split protocol
// shared by every detector.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdetect/feature_table.hpp"
#include "repdetect/matrix.hpp"

namespace repdetect {

struct LogisticHyperparams {
  double l2 = 1e-4;
  int max_iters = 10'000;
  double tolerance = 1e-8;
  std::uint64_t seed = 0;
  bool standardize = true;

  nlohmann::json to_json() const;
  static LogisticHyperparams from_json(const nlohmann::json& j);
};

struct ColumnStats {
  std::vector<double> means;
  std::vector<double> stds;  // zero-variance columns get 1
};

ColumnStats column_stats(const MatrixD& x);
MatrixD standardize(const MatrixD& x, const ColumnStats& stats);

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> feature_means;
  std::vector<double> feature_stds;
  LogisticHyperparams hyperparams;
  // Diagnostics of the fit.
  int iterations = 0;
  double final_loss = 0.0;
  double gradient_inf_norm = 0.0;

  std::size_t dims() const noexcept { return weights.size(); }
  nlohmann::json to_json() const;
  static LogisticModel from_json(const nlohmann::json& j);
};

// Mean cross-entropy + (l2/2)|w|^2 on already-standardized rows `z`, and its
// gradient. The bias is not regularized.
struct Objective {
  double loss = 0.0;
  std::vector<double> grad_w;
  double grad_b = 0.0;
};
Objective logistic_objective(const MatrixD& z, std::span<const int> y, std::span<const double> w,
                             double b, double l2);

// Full-batch gradient descent from zero with backtracking (Armijo) line
// search. `loss_trace`, when given, receives the loss after each accepted
// step, starting with the loss at the zero initialization.
LogisticModel train_logistic(const MatrixD& x, std::span<const int> y,
                             const LogisticHyperparams& hp = {},
                             std::vector<double>* loss_trace = nullptr);

double predict_proba(const LogisticModel& model, std::span<const double> x);
inline int predict_label(const LogisticModel& model, std::span<const double> x) {
  return predict_proba(model, x) >= 0.5 ? 1 : 0;
}

struct EvalReport {
  std::string detector;
  std::string dataset;
  std::string attack_tag;
  double accuracy = 0.0;
  std::size_t tp = 0;  // adversarial flagged adversarial
  std::size_t fp = 0;  // normal flagged adversarial
  std::size_t tn = 0;
  std::size_t fn = 0;
  std::uint64_t seed = 0;
  bool standardized = true;
  nlohmann::json hyperparams = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  nlohmann::json to_json() const;
};

// Confusion counts of predicted against true labels (1 = adversarial).
EvalReport score_predictions(std::span<const int> predicted, std::span<const int> truth);
EvalReport evaluate(const LogisticModel& model, const MatrixD& x, std::span<const int> y);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
// Seeded uniform shuffle; the first ceil(fraction * n) indices train.
Split split_rows(std::size_t n, double fraction, std::uint64_t seed);

struct ExperimentConfig {
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0;
  LogisticHyperparams hyperparams;
};

struct DetectionResult {
  EvalReport report;
  LogisticModel model;
};

// Split, train g on the training side, score the held-out side. Throws
// DataError when the training side lacks a class or the test side is empty.
DetectionResult run_detection(const FeatureTable& features, const ExperimentConfig& config,
                              const std::string& detector_name);

// Language-model score baseline: one scalar per example, thresholded by a
// one-feature logistic model under the same protocol.
DetectionResult lm_score_detector(std::span<const double> scores, std::span<const int> labels,
                                  const ExperimentConfig& config);

}  // namespace repdetect
