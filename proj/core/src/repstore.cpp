#include "repdetect/repstore.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "repdetect/error.hpp"

namespace repdetect {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::train:
      return "train";
    case Role::normal:
      return "normal";
    case Role::adversarial:
      return "adversarial";
  }
  return "unknown";
}

Role parse_role(std::string_view text) {
  if (text == "train") return Role::train;
  if (text == "normal") return Role::normal;
  if (text == "adversarial") return Role::adversarial;
  throw ParseError("repstore: unknown role '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Byte helpers
// ---------------------------------------------------------------------------

namespace {

template <typename U>
void put_le(std::vector<std::byte>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xFFu));
  }
}

template <typename U>
U get_le(std::span<const std::byte> bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(std::to_integer<unsigned>(bytes[offset + i])) << (8 * i);
  }
  return value;
}

template <typename T>
std::vector<std::byte> encode_impl(const Matrix<T>& m, Dtype dtype) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw FormatError("repm: refusing to encode an empty matrix");
  }
  std::vector<std::byte> out;
  out.reserve(repm::kHeaderBytes + m.rows() * m.cols() * sizeof(T));
  for (char c : repm::kMagic) out.push_back(static_cast<std::byte>(c));
  put_le<std::uint32_t>(out, repm::kVersion);
  put_le<std::uint64_t>(out, m.rows());
  put_le<std::uint64_t>(out, m.cols());
  out.push_back(static_cast<std::byte>(dtype));
  std::size_t index = 0;
  for (T v : m.values()) {
    if (!std::isfinite(v)) {
      throw FormatError("repm: non-finite value at flat index " + std::to_string(index));
    }
    if constexpr (sizeof(T) == 4) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    ++index;
  }
  return out;
}

std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::float32 ? 4 : 8; }

}  // namespace

namespace repm {

std::vector<std::byte> encode(const MatrixF& m) { return encode_impl(m, Dtype::float32); }
std::vector<std::byte> encode(const MatrixD& m) { return encode_impl(m, Dtype::float64); }

Header decode_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("repm: file shorter than header (" + std::to_string(bytes.size()) + " bytes)");
  }
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (static_cast<char>(bytes[i]) != kMagic[i]) throw FormatError("repm: bad magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kVersion) {
    throw FormatError("repm: unsupported version " + std::to_string(version));
  }
  Header h;
  h.rows = get_le<std::uint64_t>(bytes, 8);
  h.dims = get_le<std::uint64_t>(bytes, 16);
  const auto tag = std::to_integer<std::uint8_t>(bytes[24]);
  if (tag != static_cast<std::uint8_t>(Dtype::float32) &&
      tag != static_cast<std::uint8_t>(Dtype::float64)) {
    throw FormatError("repm: unknown dtype tag " + std::to_string(tag));
  }
  h.dtype = static_cast<Dtype>(tag);
  if (h.rows == 0 || h.dims == 0) throw FormatError("repm: zero-sized matrix");
  const auto payload = bytes.size() - kHeaderBytes;
  if (h.dims > payload || h.rows > payload / h.dims ||
      h.rows * h.dims * dtype_size(h.dtype) != payload) {
    throw FormatError("repm: payload of " + std::to_string(payload) + " bytes does not match " +
                      std::to_string(h.rows) + "x" + std::to_string(h.dims) + " header");
  }
  return h;
}

MatrixF decode_f32(std::span<const std::byte> bytes) {
  const Header h = decode_header(bytes);
  if (h.dtype != Dtype::float32) throw FormatError("repm: expected float32 payload");
  std::vector<float> data(h.rows * h.dims);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, kHeaderBytes + 4 * i));
    if (!std::isfinite(data[i])) {
      throw FormatError("repm: non-finite value at flat index " + std::to_string(i));
    }
  }
  return MatrixF(h.rows, h.dims, std::move(data));
}

MatrixD decode_f64(std::span<const std::byte> bytes) {
  const Header h = decode_header(bytes);
  std::vector<double> data(h.rows * h.dims);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (h.dtype == Dtype::float32) {
      data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, kHeaderBytes + 4 * i));
    } else {
      data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, kHeaderBytes + 8 * i));
    }
    if (!std::isfinite(data[i])) {
      throw FormatError("repm: non-finite value at flat index " + std::to_string(i));
    }
  }
  return MatrixD(h.rows, h.dims, std::move(data));
}

}  // namespace repm

// ---------------------------------------------------------------------------
// Files and hashing
// ---------------------------------------------------------------------------

std::vector<std::byte> read_file_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open '" + file.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("short read on '" + file.string() + "'");
  }
  return bytes;
}

void write_file_bytes(const fs::path& file, std::span<const std::byte> bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed on '" + file.string() + "'");
}

void write_text_file(const fs::path& file, std::string_view text) {
  write_file_bytes(file, std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::string sha256_hex(std::span<const std::byte> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw Error("sha256: digest computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const fs::path& file) { return sha256_hex(read_file_bytes(file)); }

std::string write_matrix(const MatrixF& m, const fs::path& file) {
  const auto bytes = repm::encode(m);
  write_file_bytes(file, bytes);
  return sha256_hex(bytes);
}

std::string write_matrix(const MatrixD& m, const fs::path& file) {
  const auto bytes = repm::encode(m);
  write_file_bytes(file, bytes);
  return sha256_hex(bytes);
}

MatrixF read_matrix(const fs::path& file) { return repm::decode_f32(read_file_bytes(file)); }
MatrixD read_matrix_f64(const fs::path& file) { return repm::decode_f64(read_file_bytes(file)); }

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

fs::path Manifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<PredictionRecord> Manifest::records(Role role) const {
  std::vector<PredictionRecord> out;
  for (const auto& r : predictions) {
    if (r.role == role) out.push_back(r);
  }
  return out;
}

std::vector<std::string> Manifest::models() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (std::find(out.begin(), out.end(), e.model_id) == out.end()) out.push_back(e.model_id);
  }
  return out;
}

std::vector<int> Manifest::layers(const std::string& model_id) const {
  std::set<int> seen;
  for (const auto& e : entries) {
    if (e.model_id == model_id) seen.insert(e.layer_id);
  }
  return {seen.begin(), seen.end()};
}

const ManifestEntry* Manifest::find(const std::string& model_id, int layer_id, Role role) const {
  for (const auto& e : entries) {
    if (e.model_id == model_id && e.layer_id == layer_id && e.role == role) return &e;
  }
  return nullptr;
}

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": field '" + key + "': " + e.what());
  }
}

json parse_json_file(const fs::path& file, const std::string& what) {
  std::ifstream in(file);
  if (!in) throw IntegrityError(what + ": cannot open '" + file.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": '" + file.string() + "': " + e.what());
  }
}

std::vector<PredictionRecord> parse_predictions(const json& j) {
  if (!j.is_object() || !j.contains("records") || !j["records"].is_array()) {
    throw ParseError("predictions: expected object with array 'records'");
  }
  std::vector<PredictionRecord> out;
  std::size_t i = 0;
  for (const auto& r : j["records"]) {
    const std::string where = "predictions record " + std::to_string(i++);
    PredictionRecord rec;
    rec.example_id = field<std::string>(r, "id", where);
    rec.role = parse_role(field<std::string>(r, "role", where));
    rec.predicted_label = field<int>(r, "predicted", where);
    rec.gold_label = field<int>(r, "gold", where);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

json predictions_to_json(std::span<const PredictionRecord> records) {
  json arr = json::array();
  for (const auto& r : records) {
    arr.push_back({{"id", r.example_id},
                   {"role", std::string(to_string(r.role))},
                   {"predicted", r.predicted_label},
                   {"gold", r.gold_label}});
  }
  return {{"records", arr}};
}

json manifest_to_json(const Manifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"model_id", e.model_id},
                       {"layer_id", e.layer_id},
                       {"role", std::string(to_string(e.role))},
                       {"file", e.file},
                       {"rows", e.rows},
                       {"dims", e.dims},
                       {"sha256", e.sha256}});
  }
  json pairing = json::array();
  for (const auto& [n, a] : m.pairing) pairing.push_back({n, a});
  return {{"schema_version", m.schema_version},
          {"dataset_name", m.dataset_name},
          {"attack_tag", m.attack_tag},
          {"num_classes", m.num_classes},
          {"entries", entries},
          {"predictions", m.predictions_path},
          {"pairing", pairing}};
}

Manifest load_manifest(const fs::path& manifest_file) {
  const json j = parse_json_file(manifest_file, "manifest");
  if (!j.is_object()) throw ParseError("manifest: top level must be an object");

  Manifest m;
  m.base_dir = manifest_file.parent_path();
  m.schema_version = field<int>(j, "schema_version", "manifest");
  if (m.schema_version != kManifestSchemaVersion) {
    throw SchemaError("manifest: unsupported schema_version " + std::to_string(m.schema_version));
  }
  m.dataset_name = field<std::string>(j, "dataset_name", "manifest");
  m.attack_tag = j.value("attack_tag", std::string{});
  m.num_classes = field<int>(j, "num_classes", "manifest");
  if (m.num_classes < 2) throw ParseError("manifest: num_classes must be >= 2");
  m.predictions_path = field<std::string>(j, "predictions", "manifest");

  const json entries = field<json>(j, "entries", "manifest");
  if (!entries.is_array()) throw ParseError("manifest: 'entries' must be an array");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string where = "manifest entry " + std::to_string(i);
    ManifestEntry e;
    e.model_id = field<std::string>(entries[i], "model_id", where);
    e.layer_id = field<int>(entries[i], "layer_id", where);
    if (e.layer_id < 0) throw ParseError(where + ": layer_id must be >= 0");
    e.role = parse_role(field<std::string>(entries[i], "role", where));
    e.file = field<std::string>(entries[i], "file", where);
    e.rows = field<std::uint64_t>(entries[i], "rows", where);
    e.dims = field<std::uint64_t>(entries[i], "dims", where);
    e.sha256 = field<std::string>(entries[i], "sha256", where);
    if (m.find(e.model_id, e.layer_id, e.role) != nullptr) {
      throw ParseError(where + ": duplicate (" + e.model_id + ", " + std::to_string(e.layer_id) +
                       ", " + std::string(to_string(e.role)) + ")");
    }
    m.entries.push_back(std::move(e));
  }

  const json pairing = field<json>(j, "pairing", "manifest");
  if (!pairing.is_array()) throw ParseError("manifest: 'pairing' must be an array");
  for (const auto& p : pairing) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string()) {
      throw ParseError("manifest: pairing items must be [normal_id, adversarial_id]");
    }
    m.pairing.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
  }

  // Referenced files: existence, checksum, header agreement.
  for (const auto& e : m.entries) {
    const fs::path file = m.resolve(e.file);
    if (!fs::exists(file)) throw IntegrityError("manifest: missing matrix file '" + file.string() + "'");
    const auto bytes = read_file_bytes(file);
    const std::string digest = sha256_hex(bytes);
    if (digest != e.sha256) {
      throw IntegrityError("manifest: checksum mismatch for '" + e.file + "' (expected " + e.sha256 +
                           ", got " + digest + ")");
    }
    repm::Header h;
    try {
      h = repm::decode_header(bytes);
    } catch (const FormatError& err) {
      throw IntegrityError("manifest: '" + e.file + "': " + err.what());
    }
    if (h.rows != e.rows || h.dims != e.dims) {
      throw IntegrityError("manifest: '" + e.file + "' header is " + std::to_string(h.rows) + "x" +
                           std::to_string(h.dims) + ", manifest says " + std::to_string(e.rows) +
                           "x" + std::to_string(e.dims));
    }
  }

  const fs::path pred_file = m.resolve(m.predictions_path);
  if (!fs::exists(pred_file)) {
    throw IntegrityError("manifest: missing predictions file '" + pred_file.string() + "'");
  }
  m.predictions = parse_predictions(parse_json_file(pred_file, "predictions"));

  std::unordered_map<std::string, Role> role_of;
  for (const auto& r : m.predictions) {
    if (!role_of.emplace(r.example_id, r.role).second) {
      throw IntegrityError("predictions: duplicate example id '" + r.example_id + "'");
    }
  }
  std::unordered_set<std::string> seen_normal, seen_adv;
  for (const auto& [n, a] : m.pairing) {
    auto it = role_of.find(n);
    if (it == role_of.end() || it->second != Role::normal) {
      throw IntegrityError("manifest: pairing references unknown normal id '" + n + "'");
    }
    it = role_of.find(a);
    if (it == role_of.end() || it->second != Role::adversarial) {
      throw IntegrityError("manifest: pairing references unknown adversarial id '" + a + "'");
    }
    if (!seen_normal.insert(n).second) {
      throw IntegrityError("manifest: normal id '" + n + "' paired more than once");
    }
    if (!seen_adv.insert(a).second) {
      throw IntegrityError("manifest: adversarial id '" + a + "' paired more than once");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

json BundleReport::to_json() const {
  return {{"dataset_name", dataset_name}, {"attack_tag", attack_tag}, {"num_classes", num_classes},
          {"pairs", pairs},               {"role_rows", role_rows},   {"model_layers", model_layers},
          {"dims", dims}};
}

BundleReport validate_bundle(const Manifest& m) {
  std::vector<std::string> problems;
  BundleReport report;
  report.dataset_name = m.dataset_name;
  report.attack_tag = m.attack_tag;
  report.num_classes = m.num_classes;
  report.pairs = m.pairing.size();

  std::map<Role, std::size_t> count;
  for (const auto& r : m.predictions) {
    ++count[r.role];
    if (r.predicted_label < 0 || r.predicted_label >= m.num_classes || r.gold_label < 0 ||
        r.gold_label >= m.num_classes) {
      problems.push_back("record '" + r.example_id + "': label outside [0, " +
                         std::to_string(m.num_classes) + ")");
    }
    if (r.role == Role::normal && r.predicted_label != r.gold_label) {
      problems.push_back("normal record '" + r.example_id + "' is misclassified (predicted " +
                         std::to_string(r.predicted_label) + ", gold " + std::to_string(r.gold_label) +
                         ")");
    }
    if (r.role == Role::adversarial && r.predicted_label == r.gold_label) {
      problems.push_back("adversarial record '" + r.example_id +
                         "' is classified correctly (predicted == gold == " +
                         std::to_string(r.gold_label) + ")");
    }
  }
  for (Role role : kAllRoles) report.role_rows[std::string(to_string(role))] = count[role];

  if (count[Role::adversarial] == 0) problems.push_back("adversarial list is empty (k must be >= 1)");
  if (count[Role::normal] == 0) problems.push_back("normal list is empty (k must be >= 1)");
  if (count[Role::train] == 0) problems.push_back("train list is empty");
  if (m.pairing.size() != count[Role::normal] || m.pairing.size() != count[Role::adversarial]) {
    problems.push_back("pairing has " + std::to_string(m.pairing.size()) + " pairs but there are " +
                       std::to_string(count[Role::normal]) + " normal and " +
                       std::to_string(count[Role::adversarial]) + " adversarial records");
  }
  if (m.entries.empty()) problems.push_back("manifest lists no matrices");

  for (const auto& model : m.models()) {
    const auto layers = m.layers(model);
    report.model_layers[model] = layers;
    for (int layer : layers) {
      std::uint64_t dims = 0;
      for (Role role : kAllRoles) {
        const ManifestEntry* e = m.find(model, layer, role);
        const std::string tag =
            "(" + model + ", " + std::to_string(layer) + ", " + std::string(to_string(role)) + ")";
        if (e == nullptr) {
          problems.push_back("misalignment: no matrix for " + tag);
          continue;
        }
        if (e->rows != count[role]) {
          problems.push_back("misalignment: " + tag + " has " + std::to_string(e->rows) +
                             " rows but " + std::to_string(count[role]) + " " +
                             std::string(to_string(role)) + " records");
        }
        if (dims == 0) {
          dims = e->dims;
        } else if (e->dims != dims) {
          problems.push_back("misalignment: " + tag + " has " + std::to_string(e->dims) +
                             " dims, other roles have " + std::to_string(dims));
        }
      }
      report.dims[model + "/" + std::to_string(layer)] = dims;
    }
  }

  if (!problems.empty()) {
    std::string msg = "repstore: bundle '" + m.dataset_name + "' failed validation:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

Bundle Bundle::load(const Manifest& manifest) {
  validate_bundle(manifest);
  Bundle b;
  b.manifest_ = manifest;
  std::unordered_map<std::string, std::size_t> row_of;
  for (const auto& r : manifest.predictions) {
    row_of[r.example_id] = b.ids_[r.role].size();
    b.ids_[r.role].push_back(r.example_id);
    b.predicted_[r.role].push_back(r.predicted_label);
    b.gold_[r.role].push_back(r.gold_label);
  }
  for (const auto& [n, a] : manifest.pairing) b.pair_rows_.emplace_back(row_of.at(n), row_of.at(a));
  for (const auto& e : manifest.entries) {
    RepSet set;
    set.model_id = e.model_id;
    set.layer_id = e.layer_id;
    set.role = e.role;
    set.data = read_matrix(manifest.resolve(e.file));
    set.example_ids = b.ids_[e.role];
    b.sets_.emplace(Key{e.model_id, e.layer_id, e.role}, std::move(set));
  }
  return b;
}

const RepSet& Bundle::repset(const std::string& model_id, int layer_id, Role role) const {
  auto it = sets_.find(Key{model_id, layer_id, role});
  if (it == sets_.end()) {
    throw DataError("repstore: bundle has no matrix for (" + model_id + ", " +
                    std::to_string(layer_id) + ", " + std::string(to_string(role)) + ")");
  }
  return it->second;
}

bool Bundle::has(const std::string& model_id, int layer_id, Role role) const {
  return sets_.contains(Key{model_id, layer_id, role});
}

namespace {
template <typename V>
const V& role_lookup(const std::map<Role, V>& m, Role role) {
  static const V kEmpty{};
  auto it = m.find(role);
  return it == m.end() ? kEmpty : it->second;
}
}  // namespace

const std::vector<std::string>& Bundle::ids(Role role) const { return role_lookup(ids_, role); }
const std::vector<int>& Bundle::predicted(Role role) const { return role_lookup(predicted_, role); }
const std::vector<int>& Bundle::gold(Role role) const { return role_lookup(gold_, role); }

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

BundleWriter::BundleWriter(fs::path dir, std::string dataset_name, std::string attack_tag,
                           int num_classes)
    : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  manifest_.dataset_name = std::move(dataset_name);
  manifest_.attack_tag = std::move(attack_tag);
  manifest_.num_classes = num_classes;
  manifest_.predictions_path = "predictions.json";
}

void BundleWriter::add(const std::string& model_id, int layer_id, Role role, const MatrixF& data) {
  ManifestEntry e;
  e.model_id = model_id;
  e.layer_id = layer_id;
  e.role = role;
  e.file = model_id + "_L" + std::to_string(layer_id) + "_" + std::string(to_string(role)) + ".repm";
  e.rows = data.rows();
  e.dims = data.cols();
  e.sha256 = write_matrix(data, dir_ / e.file);
  manifest_.entries.push_back(std::move(e));
}

void BundleWriter::set_predictions(std::vector<PredictionRecord> records) {
  manifest_.predictions = std::move(records);
}

void BundleWriter::set_pairing(std::vector<std::pair<std::string, std::string>> pairing) {
  manifest_.pairing = std::move(pairing);
}

fs::path BundleWriter::finish() {
  write_text_file(dir_ / manifest_.predictions_path,
                  predictions_to_json(manifest_.predictions).dump(1) + "\n");
  const fs::path out = dir_ / "manifest.json";
  write_text_file(out, manifest_to_json(manifest_).dump(2) + "\n");
  return out;
}

}  // namespace repdetect
