#include "repdetect/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <utility>

#include "repdetect/error.hpp"
#include "repdetect/parallel.hpp"

namespace repdetect {

namespace {

bool closer(const Neighbor& a, const Neighbor& b) noexcept {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

void check_k(std::size_t k) {
  if (k < 2) throw DomainError("knn: k must be >= 2 (got " + std::to_string(k) + ")");
}

void check_dims(std::size_t query_dims, std::size_t base_dims) {
  if (query_dims != base_dims) {
    throw DomainError("knn: dimension mismatch (query " + std::to_string(query_dims) + ", base " +
                      std::to_string(base_dims) + ")");
  }
}

[[noreturn]] void insufficient(std::size_t available, std::size_t k) {
  throw DataError("knn: only " + std::to_string(available) +
                  " candidate points after zero-distance exclusion, need k = " + std::to_string(k));
}

std::vector<Neighbor> select_k(std::vector<Neighbor> candidates, std::size_t k) {
  if (candidates.size() < k) insufficient(candidates.size(), k);
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), closer);
  candidates.resize(k);
  return candidates;
}

double dot(std::span<const float> a, std::span<const float> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

std::vector<double> squared_norms(const MatrixF& m) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), m.row(i));
  return out;
}

// Norm-expansion ranking followed by exact re-ranking.
//
// approx(i) = |q|^2 + |b_i|^2 - 2 q.b_i differs from the exact squared
// distance by at most `slack`, a forward error bound for double accumulation
// over D float products. After k exact neighbors are held, any row whose
// approx exceeds tau + slack cannot beat the current k-th neighbor.
class BlockedSearcher {
 public:
  BlockedSearcher(const MatrixF& base) : base_(base), norms_(squared_norms(base)) {
    max_norm_ = norms_.empty() ? 0.0 : *std::max_element(norms_.begin(), norms_.end());
  }

  std::vector<Neighbor> search(std::span<const float> query, std::size_t k, bool exclude_zero) const {
    const std::size_t n = base_.rows();
    const std::size_t d = base_.cols();
    const double qn = dot(query, query);

    std::vector<std::pair<double, std::size_t>> approx(n);
    constexpr std::size_t kBlock = 4;
    std::size_t i = 0;
    for (; i + kBlock <= n; i += kBlock) {
      double acc[kBlock] = {0.0, 0.0, 0.0, 0.0};
      const float* rows[kBlock] = {base_.row(i).data(), base_.row(i + 1).data(),
                                   base_.row(i + 2).data(), base_.row(i + 3).data()};
      for (std::size_t j = 0; j < d; ++j) {
        const double qj = query[j];
        for (std::size_t r = 0; r < kBlock; ++r) acc[r] += qj * static_cast<double>(rows[r][j]);
      }
      for (std::size_t r = 0; r < kBlock; ++r) {
        approx[i + r] = {qn + norms_[i + r] - 2.0 * acc[r], i + r};
      }
    }
    for (; i < n; ++i) approx[i] = {qn + norms_[i] - 2.0 * dot(query, base_.row(i)), i};
    std::sort(approx.begin(), approx.end());

    constexpr double kUnit = std::numeric_limits<double>::epsilon();
    const double scale = 8.0 * static_cast<double>(d + 4) * kUnit;
    const double norm_slack = scale * (qn + max_norm_);

    // Max-heap on (distance, index): top is the current k-th neighbor.
    auto worse = [](const Neighbor& a, const Neighbor& b) { return closer(a, b); };
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);
    for (const auto& [a, idx] : approx) {
      if (heap.size() == k) {
        const double tau = heap.top().distance * heap.top().distance;
        if (a > tau + norm_slack + scale * tau) break;
      }
      const double dist = std::sqrt(squared_distance(query, base_.row(idx)));
      if (exclude_zero && dist == 0.0) continue;
      const Neighbor cand{idx, dist};
      if (heap.size() < k) {
        heap.push(cand);
      } else if (closer(cand, heap.top())) {
        heap.pop();
        heap.push(cand);
      }
    }
    if (heap.size() < k) insufficient(heap.size(), k);
    std::vector<Neighbor> out(k);
    for (std::size_t r = k; r-- > 0;) {
      out[r] = heap.top();
      heap.pop();
    }
    return out;
  }

 private:
  const MatrixF& base_;
  std::vector<double> norms_;
  double max_norm_ = 0.0;
};

std::vector<Neighbor> naive_search(std::span<const float> query, const MatrixF& base, std::size_t k,
                                   bool exclude_zero) {
  std::vector<Neighbor> cand;
  cand.reserve(base.rows());
  for (std::size_t i = 0; i < base.rows(); ++i) {
    const double dist = std::sqrt(squared_distance(query, base.row(i)));
    if (exclude_zero && dist == 0.0) continue;
    cand.push_back({i, dist});
  }
  return select_k(std::move(cand), k);
}

}  // namespace

double squared_distance(std::span<const float> a, std::span<const float> b) {
  check_dims(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += diff * diff;
  }
  return s;
}

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  return std::sqrt(squared_distance(a, b));
}

std::vector<Neighbor> knn_search(std::span<const float> query, const MatrixF& base, std::size_t k,
                                 bool exclude_zero, SearchPath path) {
  check_k(k);
  check_dims(query.size(), base.cols());
  if (path == SearchPath::naive) return naive_search(query, base, k, exclude_zero);
  return BlockedSearcher(base).search(query, k, exclude_zero);
}

std::vector<Neighbor> knn_search_rows(std::span<const float> query, const MatrixF& base,
                                      std::span<const std::size_t> rows, std::size_t k,
                                      bool exclude_zero) {
  check_k(k);
  check_dims(query.size(), base.cols());
  std::vector<Neighbor> cand;
  cand.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= base.rows()) throw DomainError("knn: row index " + std::to_string(r) + " out of range");
    const double dist = std::sqrt(squared_distance(query, base.row(r)));
    if (exclude_zero && dist == 0.0) continue;
    cand.push_back({r, dist});
  }
  return select_k(std::move(cand), k);
}

std::vector<double> knn_distances(std::span<const float> query, const MatrixF& base, std::size_t k,
                                  bool exclude_zero) {
  const auto neighbors = knn_search(query, base, k, exclude_zero);
  std::vector<double> out;
  out.reserve(neighbors.size());
  for (const auto& n : neighbors) out.push_back(n.distance);
  return out;
}

std::vector<NeighborList> knn_batch(const MatrixF& queries, const MatrixF& base, std::size_t k,
                                    bool exclude_zero, SearchPath path, std::size_t threads) {
  check_k(k);
  check_dims(queries.cols(), base.cols());
  std::vector<NeighborList> out(queries.rows());
  if (path == SearchPath::naive) {
    parallel_for(queries.rows(), threads, [&](std::size_t q) {
      out[q] = {q, naive_search(queries.row(q), base, k, exclude_zero)};
    });
  } else {
    const BlockedSearcher searcher(base);
    parallel_for(queries.rows(), threads, [&](std::size_t q) {
      out[q] = {q, searcher.search(queries.row(q), k, exclude_zero)};
    });
  }
  return out;
}

Neighbor nearest_same_label(std::span<const float> query, const MatrixF& base,
                            std::span<const int> base_labels, int label) {
  check_dims(query.size(), base.cols());
  if (base_labels.size() != base.rows()) {
    throw DomainError("knn: " + std::to_string(base_labels.size()) + " labels for " +
                      std::to_string(base.rows()) + " base rows");
  }
  bool found = false;
  Neighbor best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < base.rows(); ++i) {
    if (base_labels[i] != label) continue;
    const double dist = std::sqrt(squared_distance(query, base.row(i)));
    if (!found || dist < best.distance) {
      best = {i, dist};
      found = true;
    }
  }
  if (!found) {
    throw DataError("knn: no base row carries predicted label " + std::to_string(label));
  }
  return best;
}

}  // namespace repdetect
