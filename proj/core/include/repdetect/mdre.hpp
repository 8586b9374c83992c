#pragma once

// MultiDistance Representation Ensemble.
//
// For every (normal, adversarial) pair and every representation model j,
// the feature is the Euclidean distance from the example to its nearest
// training representation (under model j) among training examples that the
// target model assigned the same predicted label. Normals fill rows [0, k)
// with label 0, their adversarial partners fill rows [k, 2k) with label 1.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdetect/detect.hpp"
#include "repdetect/feature_table.hpp"
#include "repdetect/matrix.hpp"
#include "repdetect/repstore.hpp"

namespace repdetect {

inline constexpr int kLastLayer = -1;

struct MdreConfig {
  std::vector<std::string> model_ids;  // empty = every model in the bundle
  int layer = kLastLayer;              // layer supplying each model's representation
  std::uint64_t split_seed = 0;
  double split_fraction = 0.8;
  LogisticHyperparams hyperparams;
  std::size_t threads = 0;

  nlohmann::json to_json() const;
  ExperimentConfig experiment() const { return {split_fraction, split_seed, hyperparams}; }
};

// One representation model's matrices, rows aligned with the label vectors
// passed alongside.
struct MdreView {
  std::string model_id;
  const MatrixF* train = nullptr;
  const MatrixF* normal = nullptr;
  const MatrixF* adversarial = nullptr;
};

struct MdreLabels {
  std::span<const int> train_predicted;
  std::span<const int> normal_predicted;
  std::span<const int> adversarial_predicted;
  std::span<const std::string> normal_ids;
  std::span<const std::string> adversarial_ids;
  // (normal row, adversarial row) per pair.
  std::span<const std::pair<std::size_t, std::size_t>> pairs;
};

FeatureTable mdre_feature_matrix(std::span<const MdreView> views, const MdreLabels& labels,
                                 std::size_t threads = 0);

// Requires a validated bundle; resolves config.layer per model.
FeatureTable mdre_feature_matrix(const Bundle& bundle, const MdreConfig& config);

DetectionResult run_mdre(const FeatureTable& features, const MdreConfig& config);

// Single-model (m = 1) runs, one per feature column, same split seed.
std::vector<DetectionResult> run_mdre_ablation(const FeatureTable& features, const MdreConfig& config);

}  // namespace repdetect
