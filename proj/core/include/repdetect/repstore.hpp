#pragma once

// On-disk representation bundles.
//
// A bundle is a JSON manifest that indexes REPM matrix files (one per
// model/layer/role triple), a predictions file, and the pairing between
// normal and adversarial examples. Row order inside every matrix of a role
// follows the order of that role's records in the predictions file.
//
// See docs/formats.md for the byte layout and JSON schemas.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdetect/matrix.hpp"

namespace repdetect {

enum class Role { train, normal, adversarial };

std::string_view to_string(Role role) noexcept;
Role parse_role(std::string_view text);
inline constexpr std::array<Role, 3> kAllRoles = {Role::train, Role::normal, Role::adversarial};

// ---------------------------------------------------------------------------
// REPM binary matrix format
// ---------------------------------------------------------------------------

enum class Dtype : std::uint8_t { float32 = 1, float64 = 2 };

namespace repm {
inline constexpr std::array<char, 4> kMagic = {'R', 'E', 'P', 'M'};
inline constexpr std::uint32_t kVersion = 1;
// magic(4) + version(u32) + rows(u64) + dims(u64) + dtype(u8)
inline constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 8 + 1;

struct Header {
  std::uint64_t rows = 0;
  std::uint64_t dims = 0;
  Dtype dtype = Dtype::float32;
};

std::vector<std::byte> encode(const MatrixF& m);
std::vector<std::byte> encode(const MatrixD& m);
Header decode_header(std::span<const std::byte> bytes);
MatrixF decode_f32(std::span<const std::byte> bytes);
// Accepts either dtype; float32 payloads are widened.
MatrixD decode_f64(std::span<const std::byte> bytes);
}  // namespace repm

// Writes the REPM encoding of `m` and returns the SHA-256 (lowercase hex) of
// the bytes written. Output is a pure function of the payload.
std::string write_matrix(const MatrixF& m, const std::filesystem::path& file);
std::string write_matrix(const MatrixD& m, const std::filesystem::path& file);
MatrixF read_matrix(const std::filesystem::path& file);
MatrixD read_matrix_f64(const std::filesystem::path& file);

std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_file(const std::filesystem::path& file);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& file);
void write_file_bytes(const std::filesystem::path& file, std::span<const std::byte> bytes);
void write_text_file(const std::filesystem::path& file, std::string_view text);

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct RepSet {
  std::string model_id;
  int layer_id = 0;
  Role role = Role::train;
  MatrixF data;
  std::vector<std::string> example_ids;

  std::size_t rows() const noexcept { return data.rows(); }
  std::size_t dims() const noexcept { return data.cols(); }
};

struct PredictionRecord {
  std::string example_id;
  int predicted_label = 0;
  int gold_label = 0;
  Role role = Role::train;
};

struct ManifestEntry {
  std::string model_id;
  int layer_id = 0;
  Role role = Role::train;
  std::string file;  // relative to the manifest directory unless absolute
  std::uint64_t rows = 0;
  std::uint64_t dims = 0;
  std::string sha256;
};

inline constexpr int kManifestSchemaVersion = 1;

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  std::string dataset_name;
  std::string attack_tag;
  int num_classes = 2;
  std::vector<ManifestEntry> entries;
  std::string predictions_path;
  std::vector<std::pair<std::string, std::string>> pairing;  // (normal id, adversarial id)

  // Populated by load_manifest.
  std::filesystem::path base_dir;
  std::vector<PredictionRecord> predictions;

  std::filesystem::path resolve(const std::string& relative) const;
  std::vector<PredictionRecord> records(Role role) const;
  std::vector<std::string> models() const;
  std::vector<int> layers(const std::string& model_id) const;
  const ManifestEntry* find(const std::string& model_id, int layer_id, Role role) const;
};

// Parses the manifest and its predictions file, then verifies checksums,
// REPM headers, and pairing references. Throws ParseError, SchemaError or
// IntegrityError.
Manifest load_manifest(const std::filesystem::path& manifest_file);

nlohmann::json manifest_to_json(const Manifest& manifest);
nlohmann::json predictions_to_json(std::span<const PredictionRecord> records);

struct BundleReport {
  std::string dataset_name;
  std::string attack_tag;
  int num_classes = 0;
  std::size_t pairs = 0;
  std::map<std::string, std::size_t> role_rows;       // role -> rows
  std::map<std::string, std::vector<int>> model_layers;  // model -> layers
  std::map<std::string, std::size_t> dims;             // "model/layer" -> dims

  nlohmann::json to_json() const;
};

// Checks every cross-file invariant of a loaded manifest. All violations are
// collected; if any exist a ValidationError listing them is thrown.
BundleReport validate_bundle(const Manifest& manifest);

// Manifest plus every referenced matrix, read into memory. Immutable after
// construction and safe for concurrent readers.
class Bundle {
 public:
  static Bundle load(const Manifest& manifest);

  const Manifest& manifest() const noexcept { return manifest_; }
  const RepSet& repset(const std::string& model_id, int layer_id, Role role) const;
  bool has(const std::string& model_id, int layer_id, Role role) const;
  const std::vector<std::string>& ids(Role role) const;
  const std::vector<int>& predicted(Role role) const;
  const std::vector<int>& gold(Role role) const;
  // Row index of each pairing entry inside the normal / adversarial roles.
  const std::vector<std::pair<std::size_t, std::size_t>>& pair_rows() const noexcept {
    return pair_rows_;
  }

 private:
  using Key = std::tuple<std::string, int, Role>;
  Manifest manifest_;
  std::map<Key, RepSet> sets_;
  std::map<Role, std::vector<std::string>> ids_;
  std::map<Role, std::vector<int>> predicted_;
  std::map<Role, std::vector<int>> gold_;
  std::vector<std::pair<std::size_t, std::size_t>> pair_rows_;
};

// Incrementally writes a bundle directory. Matrices are written as they are
// added; finish() writes predictions.json and manifest.json.
class BundleWriter {
 public:
  BundleWriter(std::filesystem::path dir, std::string dataset_name, std::string attack_tag,
               int num_classes);

  void add(const std::string& model_id, int layer_id, Role role, const MatrixF& data);
  void set_predictions(std::vector<PredictionRecord> records);
  void set_pairing(std::vector<std::pair<std::string, std::string>> pairing);
  std::filesystem::path finish();

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
};

}  // namespace repdetect
