#include "repdetect/fgws.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "repdetect/error.hpp"
#include "repdetect/repstore.hpp"

namespace repdetect {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t FrequencyTable::count(const std::string& word) const {
  auto it = counts.find(word);
  return it == counts.end() ? 0 : it->second;
}

FrequencyTable FrequencyTable::from_corpus(std::span<const Tokens> corpus) {
  FrequencyTable t;
  for (const auto& seq : corpus) {
    for (const auto& w : seq) {
      ++t.counts[w];
      ++t.total_tokens;
    }
  }
  return t;
}

FrequencyTable FrequencyTable::from_json(const json& j) {
  FrequencyTable t;
  try {
    for (const auto& [word, c] : j.at("counts").items()) {
      const auto n = c.get<std::int64_t>();
      if (n < 1) throw ParseError("fgws: word '" + word + "' has count " + std::to_string(n) + " < 1");
      t.counts[word] = static_cast<std::uint64_t>(n);
      t.total_tokens += static_cast<std::uint64_t>(n);
    }
    if (j.contains("total_tokens")) t.total_tokens = j.at("total_tokens").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("fgws: malformed frequency table: ") + e.what());
  }
  return t;
}

json FrequencyTable::to_json() const { return {{"counts", counts}, {"total_tokens", total_tokens}}; }

SynonymMap SynonymMap::from_json(const json& j) {
  SynonymMap m;
  try {
    for (const auto& [word, list] : j.at("neighbors").items()) {
      auto& out = m.neighbors[word];
      for (const auto& w : list) {
        auto s = w.get<std::string>();
        if (s != word && std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("fgws: malformed synonym map: ") + e.what());
  }
  return m;
}

json SynonymMap::to_json() const { return {{"neighbors", neighbors}}; }

namespace {

std::string join(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

int argmax(const std::vector<double>& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace

std::string ConfidenceOracle::key(std::span<const std::string> tokens) {
  const std::string s = join(tokens);
  return sha256_hex(std::as_bytes(std::span<const char>(s.data(), s.size())));
}

void ConfidenceOracle::add(std::span<const std::string> tokens, std::vector<double> probs) {
  if (probs.size() != static_cast<std::size_t>(num_classes_)) {
    throw DataError("fgws: oracle entry has " + std::to_string(probs.size()) + " probabilities, expected " +
                    std::to_string(num_classes_));
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DataError("fgws: oracle probability out of range");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("fgws: oracle probabilities do not sum to 1");
  const std::string k = key(tokens);
  by_key_[k] = std::move(probs);
  tokens_by_key_[k] = Tokens(tokens.begin(), tokens.end());
}

const std::vector<double>& ConfidenceOracle::lookup(std::span<const std::string> tokens) const {
  const std::string k = key(tokens);
  auto it = by_key_.find(k);
  if (it == by_key_.end()) throw DataError("fgws: oracle has no entry for sequence " + k);
  return it->second;
}

bool ConfidenceOracle::contains(std::span<const std::string> tokens) const {
  return by_key_.contains(key(tokens));
}

ConfidenceOracle ConfidenceOracle::from_json(const json& j) {
  try {
    ConfidenceOracle o(j.at("num_classes").get<int>());
    if (o.num_classes_ < 2) throw ParseError("fgws: oracle needs num_classes >= 2");
    for (const auto& e : j.at("entries")) {
      o.add(e.at("tokens").get<Tokens>(), e.at("probs").get<std::vector<double>>());
    }
    return o;
  } catch (const json::exception& e) {
    throw ParseError(std::string("fgws: malformed oracle: ") + e.what());
  } catch (const DataError& e) {
    throw ParseError(std::string("fgws: invalid oracle: ") + e.what());
  }
}

json ConfidenceOracle::to_json() const {
  json entries = json::array();
  for (const auto& [k, probs] : by_key_) {
    entries.push_back({{"tokens", tokens_by_key_.at(k)}, {"probs", probs}});
  }
  return {{"num_classes", num_classes_}, {"entries", entries}};
}

std::size_t percentile_rank_index(std::size_t n, int percent) {
  if (n == 0) throw DataError("fgws: percentile of an empty list");
  if (percent < 0 || percent > 100) throw DomainError("fgws: percentile outside [0, 100]");
  return std::min(n - 1, static_cast<std::size_t>(percent) * n / 100);
}

std::uint64_t frequency_threshold(const FrequencyTable& table, int delta) {
  if (delta < 0 || delta > 100 || delta % 10 != 0) {
    throw DomainError("fgws: delta must be one of 0, 10, ..., 100 (got " + std::to_string(delta) + ")");
  }
  if (table.counts.empty()) throw DataError("fgws: frequency table is empty");
  std::vector<std::uint64_t> counts;
  counts.reserve(table.counts.size());
  for (const auto& [w, c] : table.counts) counts.push_back(c);
  std::sort(counts.begin(), counts.end());
  return counts[percentile_rank_index(counts.size(), delta)];
}

SubstitutionResult substitute_infrequent(std::span<const std::string> tokens, const FrequencyTable& table,
                                         std::uint64_t threshold, const SynonymMap& synonyms) {
  SubstitutionResult r;
  r.tokens.assign(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::uint64_t own = table.count(tokens[i]);
    if (own >= threshold) continue;
    auto it = synonyms.neighbors.find(tokens[i]);
    if (it == synonyms.neighbors.end()) continue;
    const std::string* best = nullptr;
    std::uint64_t best_count = own;
    for (const auto& cand : it->second) {
      const std::uint64_t c = table.count(cand);
      if (c > best_count || (best != nullptr && c == best_count && cand < *best)) {
        best = &cand;
        best_count = c;
      }
    }
    if (best != nullptr) {
      r.log.push_back({i, tokens[i], *best});
      r.tokens[i] = *best;
    }
  }
  return r;
}

ConfidenceShift confidence_shift(std::span<const std::string> tokens, const ConfidenceOracle& oracle,
                                 const FrequencyTable& table, std::uint64_t threshold,
                                 const SynonymMap& synonyms) {
  ConfidenceShift s;
  const auto& original = oracle.lookup(tokens);
  s.predicted_class = argmax(original);
  s.transform = substitute_infrequent(tokens, table, threshold, synonyms);
  const auto& transformed = s.transform.log.empty() ? original : oracle.lookup(s.transform.tokens);
  s.difference = original[static_cast<std::size_t>(s.predicted_class)] -
                 transformed[static_cast<std::size_t>(s.predicted_class)];
  return s;
}

double calibrate_gamma(std::span<const Tokens> validation, const ConfidenceOracle& oracle,
                       const FrequencyTable& table, std::uint64_t threshold, const SynonymMap& synonyms) {
  if (validation.empty()) throw DataError("fgws: validation set is empty");
  std::vector<double> drops;
  drops.reserve(validation.size());
  for (const auto& seq : validation) {
    drops.push_back(std::max(0.0, confidence_shift(seq, oracle, table, threshold, synonyms).difference));
  }
  std::sort(drops.begin(), drops.end());
  return drops[percentile_rank_index(drops.size(), 90)];
}

FgwsVerdict fgws_detect(std::span<const std::string> tokens, const ConfidenceOracle& oracle,
                        const FrequencyTable& table, std::uint64_t threshold, const SynonymMap& synonyms,
                        double gamma) {
  FgwsVerdict v;
  v.shift = confidence_shift(tokens, oracle, table, threshold, synonyms);
  v.adversarial = v.shift.difference > gamma;
  return v;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

namespace {

json read_json(const fs::path& file, const std::string& what) {
  std::ifstream in(file);
  if (!in) throw IntegrityError("fgws: cannot open " + what + " '" + file.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("fgws: " + what + " '" + file.string() + "': " + e.what());
  }
}

}  // namespace

FgwsDataset load_fgws_dataset(const fs::path& manifest_file) {
  const json m = read_json(manifest_file, "manifest");
  const fs::path base = manifest_file.parent_path();
  FgwsDataset d;
  try {
    if (m.at("schema_version").get<int>() != 1) throw SchemaError("fgws: unsupported schema_version");
    d.dataset_name = m.at("dataset_name").get<std::string>();
    d.attack_tag = m.value("attack_tag", std::string{});
    d.frequencies = FrequencyTable::from_json(read_json(base / m.at("frequencies").get<std::string>(), "frequencies"));
    d.synonyms = SynonymMap::from_json(read_json(base / m.at("synonyms").get<std::string>(), "synonyms"));
    d.oracle = ConfidenceOracle::from_json(read_json(base / m.at("oracle").get<std::string>(), "oracle"));
    const json val = read_json(base / m.at("validation").get<std::string>(), "validation");
    d.validation = val.at("sequences").get<std::vector<Tokens>>();
    const json test = read_json(base / m.at("test").get<std::string>(), "test");
    for (const auto& e : test.at("examples")) {
      FgwsExample ex;
      ex.id = e.at("id").get<std::string>();
      ex.tokens = e.at("tokens").get<Tokens>();
      ex.label = e.at("label").get<int>();
      if (ex.label != 0 && ex.label != 1) throw ParseError("fgws: example '" + ex.id + "' label must be 0 or 1");
      if (ex.tokens.empty()) throw ParseError("fgws: example '" + ex.id + "' has no tokens");
      d.test.push_back(std::move(ex));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("fgws: malformed dataset: ") + e.what());
  }
  return d;
}

fs::path write_fgws_dataset(const FgwsDataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "frequencies.json", d.frequencies.to_json().dump(1) + "\n");
  write_text_file(dir / "synonyms.json", d.synonyms.to_json().dump(1) + "\n");
  write_text_file(dir / "oracle.json", d.oracle.to_json().dump(1) + "\n");
  write_text_file(dir / "validation.json", json{{"sequences", d.validation}}.dump(1) + "\n");
  json examples = json::array();
  for (const auto& e : d.test) examples.push_back({{"id", e.id}, {"tokens", e.tokens}, {"label", e.label}});
  write_text_file(dir / "test.json", json{{"examples", examples}}.dump(1) + "\n");
  const json manifest = {{"schema_version", 1},
                         {"dataset_name", d.dataset_name},
                         {"attack_tag", d.attack_tag},
                         {"frequencies", "frequencies.json"},
                         {"synonyms", "synonyms.json"},
                         {"oracle", "oracle.json"},
                         {"validation", "validation.json"},
                         {"test", "test.json"}};
  const fs::path out = dir / "fgws_manifest.json";
  write_text_file(out, manifest.dump(2) + "\n");
  return out;
}

json FgwsRun::verdicts_json(const FgwsDataset& d) const {
  json rows = json::array();
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const auto& v = verdicts[i];
    json subs = json::array();
    for (const auto& s : v.shift.transform.log) {
      subs.push_back({{"position", s.position}, {"from", s.from}, {"to", s.to}});
    }
    rows.push_back({{"id", d.test[i].id},
                    {"label", d.test[i].label},
                    {"verdict", v.adversarial ? "adversarial" : "normal"},
                    {"predicted_class", v.shift.predicted_class},
                    {"difference", v.shift.difference},
                    {"substitutions", subs}});
  }
  return {{"threshold", threshold}, {"gamma", gamma}, {"verdicts", rows}};
}

FgwsRun run_fgws(const FgwsDataset& d, int delta, std::optional<double> gamma_override) {
  if (d.test.empty()) throw DataError("fgws: test set is empty");
  FgwsRun run;
  run.threshold = frequency_threshold(d.frequencies, delta);
  if (gamma_override) {
    if (!(*gamma_override >= 0.0)) throw DomainError("fgws: gamma must be >= 0");
    run.gamma = *gamma_override;
    run.gamma_calibrated = false;
  } else {
    run.gamma = calibrate_gamma(d.validation, d.oracle, d.frequencies, run.threshold, d.synonyms);
  }
  std::vector<int> predicted, truth;
  for (const auto& ex : d.test) {
    try {
      run.verdicts.push_back(fgws_detect(ex.tokens, d.oracle, d.frequencies, run.threshold, d.synonyms, run.gamma));
    } catch (const DataError& e) {
      throw DataError("fgws: example '" + ex.id + "': " + e.what());
    }
    predicted.push_back(run.verdicts.back().adversarial ? 1 : 0);
    truth.push_back(ex.label);
  }
  run.report = score_predictions(predicted, truth);
  run.report.detector = "fgws";
  run.report.dataset = d.dataset_name;
  run.report.attack_tag = d.attack_tag;
  run.report.standardized = false;
  run.report.config = {{"delta", delta},
                       {"threshold", run.threshold},
                       {"gamma", run.gamma},
                       {"gamma_calibrated", run.gamma_calibrated},
                       {"gamma_percentile", 90}};
  return run;
}

}  // namespace repdetect
