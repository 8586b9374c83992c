#pragma once

// Maximum-likelihood local intrinsic dimensionality and the per-layer LID
// detector built on it.
//
//   LID(x) = -( (1/k) * sum_i ln(r_i / r_k) )^-1
//
// where r_1 <= ... <= r_k are the distances from x to its k nearest
// neighbors inside a random sample of b reference points. The reference
// pool is the train-role representation of the same layer; each query gets
// its own sample, seeded from (seed, example id, layer id).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdetect/detect.hpp"
#include "repdetect/feature_table.hpp"
#include "repdetect/matrix.hpp"
#include "repdetect/repstore.hpp"

namespace repdetect {

struct LidConfig {
  std::size_t k = 20;
  std::size_t batch_size = 100;  // b, sample size drawn from the pool per query
  std::uint64_t seed = 0;
  std::vector<int> layers;       // empty = every layer of the model
  std::size_t threads = 0;

  nlohmann::json to_json() const;
};

// Throws DomainError on k < 2, non-positive, non-finite or non-ascending
// input; DataError when every r_i equals r_k (estimate undefined).
double lid_mle(std::span<const double> ascending_distances);

std::uint64_t lid_stream_seed(std::uint64_t seed, std::string_view example_id, int layer_id) noexcept;

// b distinct indices from [0, n), ascending. Deterministic in stream_seed.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t b,
                                                    std::uint64_t stream_seed);

// LID of one query against a fresh sample of `batch_size` pool rows.
// Zero distances are excluded before neighbor selection, so k == batch_size
// works only when the query is not in the sample; k < batch_size is the
// normal setting and the only one tune_k accepts.
double lid_estimate(std::span<const float> query, const MatrixF& pool, std::size_t k,
                    std::size_t batch_size, std::uint64_t stream_seed);

struct LidLayer {
  int layer_id = 0;
  const MatrixF* queries = nullptr;  // one row per query, aligned with query_ids
  const MatrixF* pool = nullptr;
};

// One row per query, one LID column per layer. Errors are rethrown as
// DataError tagged with the offending (example id, layer id).
FeatureTable lid_feature_matrix(std::span<const LidLayer> layers,
                                std::span<const std::string> query_ids, std::span<const int> labels,
                                const LidConfig& config);

// Bundle form: rows are the k paired normals (label 0) followed by their
// adversarial partners (label 1), in pairing order.
FeatureTable lid_bundle_features(const Bundle& bundle, const std::string& model_id,
                                 const LidConfig& config);

struct KTrial {
  std::size_t k = 0;
  bool skipped = false;
  std::string reason;
  double accuracy = 0.0;
};

struct TuneResult {
  std::size_t best_k = 0;
  std::vector<KTrial> trials;
  FeatureTable best_features;
  DetectionResult best;

  nlohmann::json table_json() const;
};

// 10, 12, ..., 40, 100, 1000.
std::vector<std::size_t> default_k_grid();

// Runs the full LID detector for each k under a split seed shared across k
// and keeps the highest test accuracy (ties go to the smaller k). Values of
// k that are infeasible for the sample size or pool are skipped and
// recorded.
TuneResult tune_k(const Bundle& bundle, const std::string& model_id, std::span<const std::size_t> grid,
                  const LidConfig& base, const ExperimentConfig& experiment);

}  // namespace repdetect
