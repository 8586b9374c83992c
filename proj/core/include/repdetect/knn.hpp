#pragma once

// Exact Euclidean nearest-neighbor search.
//
// Every distance reported by this module is sqrt of the explicit
// difference-square-sum accumulated in double. Neighbor order is ascending
// distance with ties broken by smaller base index. The blocked path ranks
// candidates with the norm expansion and then re-ranks them by exact
// distance, so its output is identical to the naive scan.

#include <cstddef>
#include <span>
#include <vector>

#include "repdetect/matrix.hpp"

namespace repdetect {

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct NeighborList {
  std::size_t query_index = 0;
  std::vector<Neighbor> neighbors;

  friend bool operator==(const NeighborList&, const NeighborList&) = default;
};

enum class SearchPath { naive, blocked };

double squared_distance(std::span<const float> a, std::span<const float> b);
double euclidean_distance(std::span<const float> a, std::span<const float> b);

// The k nearest rows of `base`. Requires k >= 2. With exclude_zero every row
// at distance exactly 0 is dropped before selection.
std::vector<Neighbor> knn_search(std::span<const float> query, const MatrixF& base, std::size_t k,
                                 bool exclude_zero, SearchPath path = SearchPath::blocked);

// Same selection restricted to `rows` (indices into base). Returned indices
// refer to base rows.
std::vector<Neighbor> knn_search_rows(std::span<const float> query, const MatrixF& base,
                                      std::span<const std::size_t> rows, std::size_t k,
                                      bool exclude_zero);

// Ascending r_1..r_k.
std::vector<double> knn_distances(std::span<const float> query, const MatrixF& base, std::size_t k,
                                  bool exclude_zero);

// One NeighborList per query row; identical for any thread count.
std::vector<NeighborList> knn_batch(const MatrixF& queries, const MatrixF& base, std::size_t k,
                                    bool exclude_zero, SearchPath path = SearchPath::blocked,
                                    std::size_t threads = 0);

// Closest base row whose label equals `label`. Throws DataError when no row
// carries the label.
Neighbor nearest_same_label(std::span<const float> query, const MatrixF& base,
                            std::span<const int> base_labels, int label);

}  // namespace repdetect
