#include "repdetect/feature_table.hpp"

#include <cmath>
#include <fstream>

#include "repdetect/error.hpp"
#include "repdetect/repstore.hpp"

namespace repdetect {

namespace fs = std::filesystem;
using nlohmann::json;

void FeatureTable::check() const {
  if (row_ids.size() != rows() || labels.size() != rows()) {
    throw DataError("features: " + std::to_string(rows()) + " rows but " +
                    std::to_string(row_ids.size()) + " ids and " + std::to_string(labels.size()) +
                    " labels");
  }
  if (columns.size() != cols()) {
    throw DataError("features: " + std::to_string(cols()) + " columns but " +
                    std::to_string(columns.size()) + " column names");
  }
  for (std::size_t i = 0; i < rows(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw DataError("features: row '" + row_ids[i] + "' has label " + std::to_string(labels[i]));
    }
    for (double v : values.row(i)) {
      if (!std::isfinite(v)) throw DataError("features: row '" + row_ids[i] + "' has a non-finite value");
    }
  }
}

FeatureTable FeatureTable::select_columns(const std::vector<std::size_t>& cols) const {
  FeatureTable out;
  out.row_ids = row_ids;
  out.labels = labels;
  out.meta = meta;
  out.values = MatrixD(rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= this->cols()) throw DomainError("features: column index out of range");
    out.columns.push_back(columns[cols[j]]);
    for (std::size_t i = 0; i < rows(); ++i) out.values(i, j) = values(i, cols[j]);
  }
  return out;
}

void write_feature_table(const FeatureTable& table, const fs::path& header_file) {
  table.check();
  if (header_file.extension() != ".json") {
    throw IoError("features: header path must end in .json: '" + header_file.string() + "'");
  }
  fs::path payload = header_file;
  payload.replace_extension(".repm");
  const std::string digest = write_matrix(table.values, payload);
  const json header = {{"format", "repdetect-features"},
                       {"version", 1},
                       {"rows", table.rows()},
                       {"cols", table.cols()},
                       {"columns", table.columns},
                       {"row_ids", table.row_ids},
                       {"labels", table.labels},
                       {"payload", payload.filename().string()},
                       {"payload_sha256", digest},
                       {"meta", table.meta}};
  write_text_file(header_file, header.dump(1) + "\n");
}

FeatureTable read_feature_table(const fs::path& header_file) {
  std::ifstream in(header_file);
  if (!in) throw IoError("features: cannot open '" + header_file.string() + "'");
  json header;
  try {
    header = json::parse(in);
    if (header.at("format").get<std::string>() != "repdetect-features") {
      throw ParseError("features: '" + header_file.string() + "' is not a feature table");
    }
    if (header.at("version").get<int>() != 1) throw SchemaError("features: unsupported version");
  } catch (const json::exception& e) {
    throw ParseError("features: '" + header_file.string() + "': " + e.what());
  }
  FeatureTable t;
  try {
    t.columns = header.at("columns").get<std::vector<std::string>>();
    t.row_ids = header.at("row_ids").get<std::vector<std::string>>();
    t.labels = header.at("labels").get<std::vector<int>>();
    t.meta = header.value("meta", json::object());
  } catch (const json::exception& e) {
    throw ParseError("features: '" + header_file.string() + "': " + e.what());
  }
  const fs::path payload = header_file.parent_path() / header.at("payload").get<std::string>();
  const auto bytes = read_file_bytes(payload);
  if (sha256_hex(bytes) != header.at("payload_sha256").get<std::string>()) {
    throw IntegrityError("features: checksum mismatch for '" + payload.string() + "'");
  }
  t.values = repm::decode_f64(bytes);
  if (t.values.rows() != header.at("rows").get<std::size_t>() ||
      t.values.cols() != header.at("cols").get<std::size_t>()) {
    throw IntegrityError("features: payload shape disagrees with header");
  }
  t.check();
  return t;
}

}  // namespace repdetect
