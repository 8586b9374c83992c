#include "repdetect/lid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_set>

#include "repdetect/error.hpp"
#include "repdetect/knn.hpp"
#include "repdetect/parallel.hpp"
#include "repdetect/seeding.hpp"

namespace repdetect {

using nlohmann::json;

json LidConfig::to_json() const {
  return {{"k", k}, {"batch_size", batch_size}, {"seed", seed}, {"layers", layers}};
}

double lid_mle(std::span<const double> r) {
  const std::size_t k = r.size();
  if (k < 2) throw DomainError("lid: need k >= 2 distances");
  for (std::size_t i = 0; i < k; ++i) {
    if (!std::isfinite(r[i]) || r[i] <= 0.0) {
      throw DomainError("lid: distance r_" + std::to_string(i + 1) + " is not finite and positive");
    }
    if (i > 0 && r[i] < r[i - 1]) throw DomainError("lid: distances are not ascending");
  }
  const double rk = r[k - 1];
  double sum = 0.0;
  for (double ri : r) sum += std::log(ri / rk);
  const double mean = sum / static_cast<double>(k);
  if (mean == 0.0) throw DataError("lid: estimate undefined, all k distances equal r_k");
  return -1.0 / mean;
}

std::uint64_t lid_stream_seed(std::uint64_t seed, std::string_view example_id, int layer_id) noexcept {
  return derive_seed(seed, {fnv1a64(example_id), static_cast<std::uint64_t>(static_cast<std::uint32_t>(layer_id))});
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t b,
                                                    std::uint64_t stream_seed) {
  if (b > n) {
    throw DataError("lid: cannot sample " + std::to_string(b) + " of " + std::to_string(n) + " rows");
  }
  std::mt19937_64 rng(stream_seed);
  std::vector<std::size_t> out;
  out.reserve(b);
  if (2 * b >= n) {
    // Dense case: partial Fisher-Yates.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < b; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(b));
  } else {
    // Floyd's algorithm.
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(2 * b);
    for (std::size_t j = n - b; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, j);
      const std::size_t t = pick(rng);
      out.push_back(chosen.insert(t).second ? t : (chosen.insert(j), j));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Ascending non-zero distances from the query to its sample (at most `keep`).
std::vector<double> sample_distances(std::span<const float> query, const MatrixF& pool,
                                     std::size_t keep, std::size_t batch_size,
                                     std::uint64_t stream_seed) {
  const auto rows = sample_without_replacement(pool.rows(), batch_size, stream_seed);
  const auto neighbors = knn_search_rows(query, pool, rows, keep, /*exclude_zero=*/true);
  std::vector<double> out;
  out.reserve(neighbors.size());
  for (const auto& n : neighbors) out.push_back(n.distance);
  return out;
}

void check_config(std::size_t k, std::size_t batch_size, std::size_t pool_rows) {
  if (k < 2) throw DomainError("lid: k must be >= 2");
  if (k > batch_size) {
    throw DomainError("lid: k (" + std::to_string(k) + ") exceeds batch size (" +
                      std::to_string(batch_size) + ")");
  }
  if (batch_size > pool_rows) {
    throw DataError("lid: batch size " + std::to_string(batch_size) + " exceeds pool of " +
                    std::to_string(pool_rows) + " rows");
  }
}

std::string layer_column(int layer_id) { return "lid_L" + std::to_string(layer_id); }

// Per (query, layer) sorted sample distances, long enough for the largest k.
struct DistanceCache {
  std::size_t queries = 0;
  std::vector<int> layer_ids;
  std::vector<std::vector<double>> dists;  // [layer * queries + q]
};

DistanceCache build_cache(std::span<const LidLayer> layers, std::span<const std::string> query_ids,
                          std::size_t keep, std::size_t batch_size, std::uint64_t seed,
                          std::size_t threads) {
  DistanceCache cache;
  cache.queries = query_ids.size();
  cache.dists.resize(layers.size() * cache.queries);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LidLayer& layer = layers[l];
    if (layer.queries == nullptr || layer.pool == nullptr) throw DomainError("lid: null layer input");
    if (layer.queries->rows() != query_ids.size()) {
      throw DomainError("lid: layer " + std::to_string(layer.layer_id) + " has " +
                        std::to_string(layer.queries->rows()) + " query rows for " +
                        std::to_string(query_ids.size()) + " ids");
    }
    if (layer.queries->cols() != layer.pool->cols()) {
      throw DomainError("lid: layer " + std::to_string(layer.layer_id) +
                        " query and pool dims disagree");
    }
    check_config(keep, batch_size, layer.pool->rows());
    cache.layer_ids.push_back(layer.layer_id);
    parallel_for(cache.queries, threads, [&](std::size_t q) {
      try {
        cache.dists[l * cache.queries + q] =
            sample_distances(layer.queries->row(q), *layer.pool, keep, batch_size,
                             lid_stream_seed(seed, query_ids[q], layer.layer_id));
      } catch (const Error& e) {
        throw DataError("lid: example '" + query_ids[q] + "', layer " +
                        std::to_string(layer.layer_id) + ": " + e.what());
      }
    });
  }
  return cache;
}

FeatureTable features_from_cache(const DistanceCache& cache, std::span<const std::string> query_ids,
                                 std::span<const int> labels, std::size_t k) {
  FeatureTable t;
  t.row_ids.assign(query_ids.begin(), query_ids.end());
  t.labels.assign(labels.begin(), labels.end());
  for (int id : cache.layer_ids) t.columns.push_back(layer_column(id));
  t.values = MatrixD(cache.queries, cache.layer_ids.size());
  for (std::size_t l = 0; l < cache.layer_ids.size(); ++l) {
    for (std::size_t q = 0; q < cache.queries; ++q) {
      const auto& d = cache.dists[l * cache.queries + q];
      try {
        t.values(q, l) = lid_mle(std::span<const double>(d.data(), k));
      } catch (const Error& e) {
        throw DataError("lid: example '" + query_ids[q] + "', layer " +
                        std::to_string(cache.layer_ids[l]) + ": " + e.what());
      }
    }
  }
  return t;
}

struct BundleQueries {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<MatrixF> per_layer;
  std::vector<LidLayer> layers;
};

BundleQueries gather_bundle_queries(const Bundle& bundle, const std::string& model_id,
                                    const std::vector<int>& requested_layers) {
  BundleQueries out;
  const auto& pairs = bundle.pair_rows();
  const auto& normal_ids = bundle.ids(Role::normal);
  const auto& adv_ids = bundle.ids(Role::adversarial);
  for (const auto& [n, a] : pairs) {
    out.ids.push_back(normal_ids[n]);
    out.labels.push_back(0);
  }
  for (const auto& [n, a] : pairs) {
    out.ids.push_back(adv_ids[a]);
    out.labels.push_back(1);
  }
  std::vector<int> layer_ids =
      requested_layers.empty() ? bundle.manifest().layers(model_id) : requested_layers;
  if (layer_ids.empty()) throw DataError("lid: model '" + model_id + "' has no layers in the bundle");
  out.per_layer.reserve(layer_ids.size());
  for (int layer : layer_ids) {
    const RepSet& normal = bundle.repset(model_id, layer, Role::normal);
    const RepSet& adv = bundle.repset(model_id, layer, Role::adversarial);
    MatrixF q(2 * pairs.size(), normal.dims());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      std::copy_n(normal.data.row(pairs[i].first).begin(), normal.dims(), q.row(i).begin());
      std::copy_n(adv.data.row(pairs[i].second).begin(), adv.dims(), q.row(pairs.size() + i).begin());
    }
    out.per_layer.push_back(std::move(q));
  }
  for (std::size_t l = 0; l < layer_ids.size(); ++l) {
    out.layers.push_back({layer_ids[l], &out.per_layer[l],
                          &bundle.repset(model_id, layer_ids[l], Role::train).data});
  }
  return out;
}

}  // namespace

double lid_estimate(std::span<const float> query, const MatrixF& pool, std::size_t k,
                    std::size_t batch_size, std::uint64_t stream_seed) {
  check_config(k, batch_size, pool.rows());
  return lid_mle(sample_distances(query, pool, k, batch_size, stream_seed));
}

FeatureTable lid_feature_matrix(std::span<const LidLayer> layers,
                                std::span<const std::string> query_ids, std::span<const int> labels,
                                const LidConfig& config) {
  if (layers.empty()) throw DomainError("lid: at least one layer is required");
  if (labels.size() != query_ids.size()) throw DomainError("lid: label count does not match queries");
  const DistanceCache cache =
      build_cache(layers, query_ids, config.k, config.batch_size, config.seed, config.threads);
  FeatureTable t = features_from_cache(cache, query_ids, labels, config.k);
  t.meta = {{"detector", "lid"}, {"lid", config.to_json()}};
  return t;
}

FeatureTable lid_bundle_features(const Bundle& bundle, const std::string& model_id,
                                 const LidConfig& config) {
  BundleQueries q = gather_bundle_queries(bundle, model_id, config.layers);
  FeatureTable t = lid_feature_matrix(q.layers, q.ids, q.labels, config);
  t.meta["model_id"] = model_id;
  t.meta["dataset"] = bundle.manifest().dataset_name;
  return t;
}

std::vector<std::size_t> default_k_grid() {
  std::vector<std::size_t> grid;
  for (std::size_t k = 10; k < 42; k += 2) grid.push_back(k);
  grid.push_back(100);
  grid.push_back(1000);
  return grid;
}

json TuneResult::table_json() const {
  json rows = json::array();
  for (const auto& t : trials) {
    json row = {{"k", t.k}, {"skipped", t.skipped}};
    if (t.skipped) {
      row["reason"] = t.reason;
    } else {
      row["accuracy"] = t.accuracy;
    }
    rows.push_back(row);
  }
  return {{"best_k", best_k}, {"trials", rows}};
}

TuneResult tune_k(const Bundle& bundle, const std::string& model_id, std::span<const std::size_t> grid,
                  const LidConfig& base, const ExperimentConfig& experiment) {
  if (grid.empty()) throw DomainError("lid: k grid is empty");
  BundleQueries q = gather_bundle_queries(bundle, model_id, base.layers);
  std::size_t pool_rows = std::numeric_limits<std::size_t>::max();
  for (const auto& layer : q.layers) pool_rows = std::min(pool_rows, layer.pool->rows());

  TuneResult result;
  std::size_t max_k = 0;
  for (std::size_t k : grid) {
    KTrial trial;
    trial.k = k;
    if (k < 2) {
      trial.skipped = true;
      trial.reason = "k < 2";
    } else if (k >= base.batch_size) {
      trial.skipped = true;
      trial.reason = "k >= batch size " + std::to_string(base.batch_size);
    } else if (k > pool_rows) {
      trial.skipped = true;
      trial.reason = "k exceeds pool of " + std::to_string(pool_rows) + " rows";
    } else {
      max_k = std::max(max_k, k);
    }
    result.trials.push_back(trial);
  }
  if (max_k == 0) throw DataError("lid: every k in the grid is infeasible");

  // Samples depend only on (seed, id, layer), so one distance pass serves
  // every k.
  const DistanceCache cache =
      build_cache(q.layers, q.ids, max_k, base.batch_size, base.seed, base.threads);
  bool have_best = false;
  for (auto& trial : result.trials) {
    if (trial.skipped) continue;
    LidConfig cfg = base;
    cfg.k = trial.k;
    FeatureTable t = features_from_cache(cache, q.ids, q.labels, trial.k);
    t.meta = {{"detector", "lid"}, {"lid", cfg.to_json()}, {"model_id", model_id},
              {"dataset", bundle.manifest().dataset_name}};
    DetectionResult run = run_detection(t, experiment, "lid");
    trial.accuracy = run.report.accuracy;
    if (!have_best || trial.accuracy > result.best.report.accuracy ||
        (trial.accuracy == result.best.report.accuracy && trial.k < result.best_k)) {
      have_best = true;
      result.best_k = trial.k;
      result.best = std::move(run);
      result.best_features = std::move(t);
    }
  }
  return result;
}

}  // namespace repdetect
