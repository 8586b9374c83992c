#pragma once

// Frequency-guided word substitution baseline.
//
// Words rarer than a percentile-derived count threshold are replaced by
// their most frequent synonym (when that synonym is strictly more
// frequent). An input is flagged adversarial when the replacement lowers the
// confidence of the originally predicted class by more than gamma, where
// gamma is calibrated as the 90th percentile of that drop on clean
// validation sequences.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdetect/detect.hpp"

namespace repdetect {

using Tokens = std::vector<std::string>;

struct FrequencyTable {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total_tokens = 0;

  // Absent words have count 0.
  std::uint64_t count(const std::string& word) const;

  static FrequencyTable from_corpus(std::span<const Tokens> corpus);
  static FrequencyTable from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SynonymMap {
  std::map<std::string, std::vector<std::string>> neighbors;

  // A word listed as its own neighbor is dropped.
  static SynonymMap from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

class ConfidenceOracle {
 public:
  explicit ConfidenceOracle(int num_classes = 2) : num_classes_(num_classes) {}

  // SHA-256 hex of the tokens joined by single spaces (case preserved).
  static std::string key(std::span<const std::string> tokens);

  void add(std::span<const std::string> tokens, std::vector<double> probs);
  // Throws DataError naming the sequence hash when the sequence is unknown.
  const std::vector<double>& lookup(std::span<const std::string> tokens) const;
  bool contains(std::span<const std::string> tokens) const;
  int num_classes() const noexcept { return num_classes_; }

  static ConfidenceOracle from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  int num_classes_;
  std::map<std::string, std::vector<double>> by_key_;
  std::map<std::string, Tokens> tokens_by_key_;
};

// Position in a sorted list of n values for percentile p, p in [0, 100]:
// min(n - 1, floor(p * n / 100)). Gives the minimum at p = 0 and the maximum
// at p = 100.
std::size_t percentile_rank_index(std::size_t n, int percent);

// Count of the distinct word at the delta-th percentile; delta must be one of
// 0, 10, ..., 100.
std::uint64_t frequency_threshold(const FrequencyTable& table, int delta);

struct Substitution {
  std::size_t position = 0;
  std::string from;
  std::string to;

  friend bool operator==(const Substitution&, const Substitution&) = default;
};

struct SubstitutionResult {
  Tokens tokens;
  std::vector<Substitution> log;
};

// Single left-to-right pass; replacements are not re-substituted.
SubstitutionResult substitute_infrequent(std::span<const std::string> tokens, const FrequencyTable& table,
                                         std::uint64_t threshold, const SynonymMap& synonyms);

// conf_original(c) - conf_transformed(c), c = argmax of the original.
struct ConfidenceShift {
  int predicted_class = 0;
  double difference = 0.0;
  SubstitutionResult transform;
};
ConfidenceShift confidence_shift(std::span<const std::string> tokens, const ConfidenceOracle& oracle,
                                 const FrequencyTable& table, std::uint64_t threshold,
                                 const SynonymMap& synonyms);

// 90th percentile of the per-sequence drop, each drop floored at 0.
double calibrate_gamma(std::span<const Tokens> validation, const ConfidenceOracle& oracle,
                       const FrequencyTable& table, std::uint64_t threshold, const SynonymMap& synonyms);

struct FgwsVerdict {
  bool adversarial = false;
  ConfidenceShift shift;
};

// Adversarial iff the drop strictly exceeds gamma.
FgwsVerdict fgws_detect(std::span<const std::string> tokens, const ConfidenceOracle& oracle,
                        const FrequencyTable& table, std::uint64_t threshold, const SynonymMap& synonyms,
                        double gamma);

struct FgwsExample {
  std::string id;
  Tokens tokens;
  int label = 0;  // 1 = adversarial
};

// Everything an FGWS experiment needs, normally loaded from an FGWS
// manifest (docs/formats.md).
struct FgwsDataset {
  std::string dataset_name;
  std::string attack_tag;
  FrequencyTable frequencies;
  SynonymMap synonyms;
  ConfidenceOracle oracle;
  std::vector<Tokens> validation;
  std::vector<FgwsExample> test;
};

FgwsDataset load_fgws_dataset(const std::filesystem::path& manifest_file);
// Writes the five component files plus the manifest into `dir`; returns the
// manifest path.
std::filesystem::path write_fgws_dataset(const FgwsDataset& dataset, const std::filesystem::path& dir);

struct FgwsRun {
  std::uint64_t threshold = 0;
  double gamma = 0.0;
  bool gamma_calibrated = true;
  std::vector<FgwsVerdict> verdicts;  // aligned with dataset.test
  EvalReport report;

  nlohmann::json verdicts_json(const FgwsDataset& dataset) const;
};

// Uses `gamma_override` instead of calibrating when given.
FgwsRun run_fgws(const FgwsDataset& dataset, int delta, std::optional<double> gamma_override = {});

}  // namespace repdetect
