#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdetect/matrix.hpp"

namespace repdetect {

// Detector input: one row per example, one column per feature, binary labels
// (0 = normal, 1 = adversarial).
struct FeatureTable {
  std::vector<std::string> row_ids;
  std::vector<std::string> columns;
  MatrixD values;
  std::vector<int> labels;
  // Producer configuration, echoed into the serialized header.
  nlohmann::json meta = nlohmann::json::object();

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }

  // Throws DataError on size disagreement, labels outside {0,1}, or
  // non-finite values.
  void check() const;
  FeatureTable select_columns(const std::vector<std::size_t>& cols) const;
};

// Writes `<stem>.json` (header) next to `<stem>.repm` (float64 payload).
// `header_file` must end in ".json".
void write_feature_table(const FeatureTable& table, const std::filesystem::path& header_file);
FeatureTable read_feature_table(const std::filesystem::path& header_file);

}  // namespace repdetect
