#include "repdetect/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "repdetect/error.hpp"
#include "repdetect/seeding.hpp"

namespace repdetect {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags.
enum : std::uint64_t {
  kTagBasis = 1,
  kTagTrain = 2,
  kTagTest = 3,
  kTagMap = 4,
  kTagNoise = 5,
};

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

void orthonormalize_columns(MatrixD& b) {
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < b.rows(); ++r) dot += b(r, c) * b(r, p);
      for (std::size_t r = 0; r < b.rows(); ++r) b(r, c) -= dot * b(r, p);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < b.rows(); ++r) norm += b(r, c) * b(r, c);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw DataError("synthgen: degenerate random basis");
    for (std::size_t r = 0; r < b.rows(); ++r) b(r, c) /= norm;
  }
}

MatrixD class_means(const SynthConfig& cfg) {
  const auto c = static_cast<std::size_t>(cfg.num_classes);
  MatrixD means(c, cfg.latent_dims);
  if (!cfg.class_means.empty()) {
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < cfg.latent_dims; ++j) means(i, j) = cfg.class_means[i][j];
    }
  } else if (c == 2) {
    means(0, 0) = cfg.class_separation / 2.0;
    means(1, 0) = -cfg.class_separation / 2.0;
  } else if (c > 2) {
    for (std::size_t i = 0; i < c; ++i) means(i, i) = cfg.class_separation / std::sqrt(2.0);
  }
  return means;
}

void sample_points(const SynthConfig& cfg, const MatrixD& means, const std::vector<MatrixD>& bases,
                   std::size_t n, std::uint64_t tag, MatrixD& out, std::vector<int>& labels) {
  std::mt19937_64 rng(derive_seed(cfg.seed, {tag}));
  std::normal_distribution<double> normal(0.0, 1.0);
  out = MatrixD(n, cfg.latent_dims);
  labels.assign(n, 0);
  std::vector<double> u(cfg.intrinsic_dims);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(i % static_cast<std::size_t>(cfg.num_classes));
    labels[i] = static_cast<int>(c);
    for (auto& v : u) v = cfg.class_spread * normal(rng);
    for (std::size_t j = 0; j < cfg.latent_dims; ++j) {
      double v = means(c, j) + cfg.off_manifold_spread * normal(rng);
      for (std::size_t a = 0; a < cfg.intrinsic_dims; ++a) v += bases[c](j, a) * u[a];
      out(i, j) = v;
    }
  }
}

}  // namespace

MatrixF to_float(const MatrixD& m) {
  MatrixF out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = static_cast<float>(m(i, j));
  }
  return out;
}

SynthConfig SynthConfig::hard_margin() { return SynthConfig{}; }

void SynthConfig::check() const {
  auto fail = [](const std::string& msg) { throw DomainError("synthgen: " + msg); };
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (latent_dims == 0 || view_dims == 0) fail("dimensions must be > 0");
  if (intrinsic_dims == 0 || intrinsic_dims > latent_dims) fail("intrinsic_dims must be in [1, latent_dims]");
  if (view_count == 0 || layer_count == 0) fail("view_count and layer_count must be > 0");
  if (n_train == 0 || n_test == 0 || pairs == 0) fail("counts must be > 0");
  if (!(class_spread >= 0.0) || !(off_manifold_spread >= 0.0) || !std::isfinite(class_spread) ||
      !std::isfinite(off_manifold_spread)) {
    fail("singular covariance request (spreads must be finite and >= 0)");
  }
  if (!(view_noise >= 0.0)) fail("view_noise must be >= 0");
  if (!(adversary_margin > 0.0)) fail("adversary_margin must be > 0");
  if (class_means.empty()) {
    if (num_classes > 2 && static_cast<std::size_t>(num_classes) > latent_dims) {
      fail("generated means need latent_dims >= num_classes");
    }
    if (num_classes > 1 && !(class_separation > 0.0)) fail("class_separation must be > 0");
  } else {
    if (class_means.size() != static_cast<std::size_t>(num_classes)) fail("class_means needs one row per class");
    for (const auto& m : class_means) {
      if (m.size() != latent_dims) fail("class_means rows must have latent_dims entries");
    }
    for (std::size_t a = 0; a < class_means.size(); ++a) {
      for (std::size_t b = a + 1; b < class_means.size(); ++b) {
        if (class_means[a] == class_means[b]) fail("class means must be pairwise distinct");
      }
    }
  }
}

json SynthConfig::to_json() const {
  return {{"num_classes", num_classes},
          {"latent_dims", latent_dims},
          {"intrinsic_dims", intrinsic_dims},
          {"view_count", view_count},
          {"view_dims", view_dims},
          {"layer_count", layer_count},
          {"class_separation", class_separation},
          {"class_means", class_means},
          {"class_spread", class_spread},
          {"off_manifold_spread", off_manifold_spread},
          {"view_noise", view_noise},
          {"n_train", n_train},
          {"n_test", n_test},
          {"pairs", pairs},
          {"adversary_margin", adversary_margin},
          {"seed", seed}};
}

LatentData gen_mixture(const SynthConfig& cfg) {
  cfg.check();
  LatentData d;
  d.means = class_means(cfg);
  std::vector<MatrixD> bases;
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {kTagBasis, static_cast<std::uint64_t>(c)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixD b(cfg.latent_dims, cfg.intrinsic_dims);
    for (auto& v : b.values()) v = normal(rng);
    orthonormalize_columns(b);
    bases.push_back(std::move(b));
  }
  sample_points(cfg, d.means, bases, cfg.n_train, kTagTrain, d.train, d.train_labels);
  sample_points(cfg, d.means, bases, cfg.n_test, kTagTest, d.test, d.test_labels);
  return d;
}

MatrixD view_map(const SynthConfig& cfg, std::size_t view, std::size_t layer) {
  std::mt19937_64 rng(derive_seed(cfg.seed, {kTagMap, view, layer}));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.view_dims)));
  MatrixD a(cfg.view_dims, cfg.latent_dims);
  for (auto& v : a.values()) v = normal(rng);
  return a;
}

MatrixF project(const MatrixD& latent, const MatrixD& map, double noise, std::uint64_t noise_seed) {
  if (map.cols() != latent.cols()) throw DomainError("synthgen: map and latent dims disagree");
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixF out(latent.rows(), map.rows());
  for (std::size_t i = 0; i < latent.rows(); ++i) {
    for (std::size_t r = 0; r < map.rows(); ++r) {
      double v = 0.0;
      for (std::size_t j = 0; j < latent.cols(); ++j) v += map(r, j) * latent(i, j);
      if (noise > 0.0) v += noise * normal(rng);
      out(i, r) = static_cast<float>(v);
    }
  }
  return out;
}

std::vector<RepSet> gen_views(const MatrixD& latent, std::span<const std::string> ids, Role role,
                              int layer, const SynthConfig& cfg) {
  if (ids.size() != latent.rows()) throw DomainError("synthgen: id count does not match rows");
  std::vector<RepSet> out;
  for (std::size_t v = 0; v < cfg.view_count; ++v) {
    RepSet s;
    s.model_id = "view" + std::to_string(v);
    s.layer_id = layer;
    s.role = role;
    s.example_ids.assign(ids.begin(), ids.end());
    const auto l = static_cast<std::size_t>(layer);
    s.data = project(latent, view_map(cfg, v, l), cfg.view_noise,
                     derive_seed(cfg.seed, {kTagNoise, v, l, static_cast<std::uint64_t>(role)}));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target model
// ---------------------------------------------------------------------------

LinearPredictor LinearPredictor::fit(const MatrixD& x, std::span<const int> labels, int num_classes) {
  if (num_classes < 2) throw DataError("synthgen: target model needs at least two classes");
  LinearPredictor p;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == c ? 1 : 0;
    try {
      p.models_.push_back(train_logistic(x, y));
    } catch (const DataError& e) {
      throw DataError("synthgen: target model, class " + std::to_string(c) + ": " + e.what());
    }
  }
  return p;
}

int LinearPredictor::predict(std::span<const double> x) const {
  int best = 0;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < models_.size(); ++c) {
    const LogisticModel& m = models_[c];
    double s = m.bias;
    for (std::size_t j = 0; j < x.size(); ++j) s += m.weights[j] * (x[j] - m.feature_means[j]) / m.feature_stds[j];
    if (s > best_logit) {
      best_logit = s;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<int> LinearPredictor::predict_all(const MatrixD& x) const {
  std::vector<int> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict(x.row(i));
  return out;
}

double LinearPredictor::accuracy(const MatrixD& x, std::span<const int> labels) const {
  if (x.rows() == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) hit += predict(x.row(i)) == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(x.rows());
}

LinearPredictor toy_target(const MatrixD& train, std::span<const int> labels, int num_classes) {
  return LinearPredictor::fit(train, labels, num_classes);
}

// ---------------------------------------------------------------------------
// Adversaries
// ---------------------------------------------------------------------------

CraftedAdversaries craft_adversaries(const LatentData& data, const LinearPredictor& predictor,
                                     const SynthConfig& cfg) {
  constexpr double kStepTolerance = 1e-6;
  const std::size_t dims = data.test.cols();
  CraftedAdversaries out;
  std::vector<double> adv_rows;
  std::vector<double> point(dims);
  auto along = [&](std::span<const double> x, std::span<const double> target, double t) {
    for (std::size_t j = 0; j < dims; ++j) point[j] = x[j] + t * (target[j] - x[j]);
    return std::span<const double>(point);
  };

  for (std::size_t i = 0; i < data.test.rows() && out.source_rows.size() < cfg.pairs; ++i) {
    const auto x = data.test.row(i);
    const int gold = data.test_labels[i];
    if (predictor.predict(x) != gold) continue;
    ++out.examined;

    // Nearest other-class mean.
    std::size_t target_class = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < data.means.rows(); ++c) {
      if (static_cast<int>(c) == gold) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < dims; ++j) d += (data.means(c, j) - x[j]) * (data.means(c, j) - x[j]);
      if (d < best) {
        best = d;
        target_class = c;
      }
    }
    const auto target = data.means.row(target_class);
    if (predictor.predict(along(x, target, 1.0)) == gold) {
      ++out.unflippable;
      continue;
    }
    double lo = 0.0;
    double hi = 1.0;
    while (hi - lo > kStepTolerance) {
      const double mid = 0.5 * (lo + hi);
      (predictor.predict(along(x, target, mid)) != gold ? hi : lo) = mid;
    }
    along(x, target, hi);
    const double length = std::sqrt(best);
    for (std::size_t j = 0; j < dims; ++j) point[j] += cfg.adversary_margin * (target[j] - x[j]) / length;
    const int predicted = predictor.predict(point);
    if (predicted == gold) {
      ++out.unflippable;
      continue;
    }
    out.source_rows.push_back(i);
    out.predicted.push_back(predicted);
    out.boundary_steps.push_back(hi);
    adv_rows.insert(adv_rows.end(), point.begin(), point.end());
  }
  out.points = MatrixD(out.source_rows.size(), dims, std::move(adv_rows));
  return out;
}

json SynthSummary::to_json() const {
  return {{"manifest", manifest.filename().string()},
          {"pairs", pairs},
          {"unflippable", unflippable},
          {"target_train_accuracy", target_train_accuracy},
          {"target_test_accuracy", target_test_accuracy}};
}

SynthSummary write_synth_bundle(const SynthConfig& cfg, const fs::path& dir) {
  const LatentData data = gen_mixture(cfg);
  const LinearPredictor target = toy_target(data.train, data.train_labels, cfg.num_classes);
  const CraftedAdversaries adv = craft_adversaries(data, target, cfg);
  if (adv.source_rows.size() < cfg.pairs) {
    throw DataError("synthgen: crafted only " + std::to_string(adv.source_rows.size()) + " of " +
                    std::to_string(cfg.pairs) + " requested adversaries (" +
                    std::to_string(adv.unflippable) + " unflippable); raise n_test");
  }

  std::vector<std::string> train_ids, normal_ids, adv_ids;
  std::vector<PredictionRecord> records;
  const auto train_pred = target.predict_all(data.train);
  for (std::size_t i = 0; i < data.train.rows(); ++i) {
    train_ids.push_back(padded("t", i));
    records.push_back({train_ids.back(), train_pred[i], data.train_labels[i], Role::train});
  }
  MatrixD normal_latent(adv.source_rows.size(), cfg.latent_dims);
  for (std::size_t j = 0; j < adv.source_rows.size(); ++j) {
    const std::size_t row = adv.source_rows[j];
    std::copy_n(data.test.row(row).begin(), cfg.latent_dims, normal_latent.row(j).begin());
    normal_ids.push_back(padded("n", j));
    records.push_back({normal_ids.back(), data.test_labels[row], data.test_labels[row], Role::normal});
  }
  std::vector<std::pair<std::string, std::string>> pairing;
  for (std::size_t j = 0; j < adv.source_rows.size(); ++j) {
    adv_ids.push_back(padded("a", j));
    records.push_back({adv_ids.back(), adv.predicted[j], data.test_labels[adv.source_rows[j]], Role::adversarial});
    pairing.emplace_back(normal_ids[j], adv_ids[j]);
  }

  BundleWriter writer(dir, "synthetic", "latent-boundary-walk", cfg.num_classes);
  for (std::size_t layer = 0; layer < cfg.layer_count; ++layer) {
    const int l = static_cast<int>(layer);
    for (auto& s : gen_views(data.train, train_ids, Role::train, l, cfg)) writer.add(s.model_id, l, s.role, s.data);
    for (auto& s : gen_views(normal_latent, normal_ids, Role::normal, l, cfg)) writer.add(s.model_id, l, s.role, s.data);
    for (auto& s : gen_views(adv.points, adv_ids, Role::adversarial, l, cfg)) writer.add(s.model_id, l, s.role, s.data);
  }
  writer.set_predictions(std::move(records));
  writer.set_pairing(std::move(pairing));

  SynthSummary summary;
  summary.manifest = writer.finish();
  summary.pairs = adv.source_rows.size();
  summary.unflippable = adv.unflippable;
  summary.target_train_accuracy = target.accuracy(data.train, data.train_labels);
  summary.target_test_accuracy = target.accuracy(data.test, data.test_labels);
  return summary;
}

// ---------------------------------------------------------------------------
// Ball, LM scores, FGWS toy
// ---------------------------------------------------------------------------

MatrixD gen_ball(std::size_t d, std::size_t n, std::uint64_t seed) {
  if (d == 0 || n == 0) throw DomainError("synthgen: gen_ball needs d >= 1 and n >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  MatrixD out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.row(i);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : row) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    const double radius = std::pow(uniform(rng), 1.0 / static_cast<double>(d)) / std::sqrt(norm);
    for (auto& v : row) v *= radius;
  }
  return out;
}

LmScoreSet gen_lm_scores(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length(5, 60);
  std::normal_distribution<double> token_logp(-5.0, 1.0);
  LmScoreSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = length(rng);
    double score = 0.0;
    for (std::size_t t = 0; t < len; ++t) score += std::min(0.0, token_logp(rng));
    s.ids.push_back(padded("lm", i));
    s.labels.push_back(static_cast<int>(i % 2));
    s.scores.push_back(score);
    s.lengths.push_back(len);
  }
  return s;
}

void write_lm_scores(const LmScoreSet& set, const std::string& dataset_name, const fs::path& file) {
  json rows = json::array();
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    rows.push_back({{"id", set.ids[i]},
                    {"score", set.scores[i]},
                    {"label", set.labels[i]},
                    {"length", set.lengths[i]}});
  }
  write_text_file(file, json{{"dataset_name", dataset_name}, {"examples", rows}}.dump(1) + "\n");
}

LmScoreSet read_lm_scores(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("lm-baseline: cannot open '" + file.string() + "'");
  LmScoreSet s;
  try {
    const json j = json::parse(in);
    for (const auto& e : j.at("examples")) {
      s.ids.push_back(e.at("id").get<std::string>());
      s.scores.push_back(e.at("score").get<double>());
      s.labels.push_back(e.at("label").get<int>());
      s.lengths.push_back(e.value("length", std::size_t{0}));
    }
  } catch (const json::exception& e) {
    throw ParseError("lm-baseline: '" + file.string() + "': " + e.what());
  }
  return s;
}

namespace {

constexpr std::size_t kFrequentWords = 200;
constexpr std::size_t kRareWords = 40;  // count 30, synonym of frequent word i
constexpr std::size_t kMidWords = 40;   // count 50, synonym of frequent word 100 + i
constexpr double kNormalConfidence = 0.9;
constexpr double kAttackedSourceConfidence = 0.75;

std::string word(const char* prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}

std::vector<double> probs_for(int cls, double confidence) {
  std::vector<double> p(2);
  p[static_cast<std::size_t>(cls)] = confidence;
  p[static_cast<std::size_t>(1 - cls)] = 1.0 - confidence;
  return p;
}

Tokens random_sentence(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(8, 15);
  std::uniform_int_distribution<std::size_t> pick(0, kFrequentWords - 1);
  Tokens t(len(rng));
  for (auto& w : t) w = word("w", pick(rng));
  return t;
}

// Clean sentence, possibly carrying one mid-frequency word whose
// substitution lowers the gold-class confidence by a small fixed shift.
void add_normal(std::size_t index, int cls, std::mt19937_64& rng, ConfidenceOracle& oracle, Tokens& out) {
  static constexpr double kShifts[] = {0.02, 0.05};
  out = random_sentence(rng);
  oracle.add(out, probs_for(cls, kNormalConfidence));
  const std::size_t slot = index % 20;
  if (slot < 16) return;
  const double shift = slot < 19 ? kShifts[0] : kShifts[1];
  std::uniform_int_distribution<std::size_t> mid(0, kMidWords - 1);
  std::uniform_int_distribution<std::size_t> pos(0, out.size() - 1);
  const std::size_t m = mid(rng);
  const std::size_t p = pos(rng);
  out[p] = word("w", 100 + m);
  oracle.add(out, probs_for(cls, kNormalConfidence - shift));  // transformed form
  out[p] = word("m", m);
  oracle.add(out, probs_for(cls, kNormalConfidence));
}

}  // namespace

FgwsDataset gen_fgws_toy(const FgwsToyConfig& cfg) {
  FgwsDataset d;
  d.dataset_name = "fgws-toy";
  d.attack_tag = "word-substitution";
  d.oracle = ConfidenceOracle(2);
  for (std::size_t i = 0; i < kFrequentWords; ++i) {
    d.frequencies.counts[word("w", i)] = 1000 + 10 * (i % 50);
  }
  for (std::size_t i = 0; i < kRareWords; ++i) {
    d.frequencies.counts[word("r", i)] = 30;
    d.synonyms.neighbors[word("r", i)] = {word("w", i)};
    d.synonyms.neighbors[word("w", i)] = {word("r", i)};
    d.synonyms.neighbors[word("w", i) + "x"] = {word("w", i)};  // typo, out of vocabulary
  }
  for (std::size_t i = 0; i < kMidWords; ++i) {
    d.frequencies.counts[word("m", i)] = 50;
    d.synonyms.neighbors[word("m", i)] = {word("w", 100 + i)};
  }
  for (const auto& [w, c] : d.frequencies.counts) d.frequencies.total_tokens += c;

  std::mt19937_64 val_rng(derive_seed(cfg.seed, {1}));
  for (std::size_t i = 0; i < cfg.validation; ++i) {
    Tokens t;
    add_normal(i, static_cast<int>(i % 2), val_rng, d.oracle, t);
    d.validation.push_back(std::move(t));
  }
  std::mt19937_64 test_rng(derive_seed(cfg.seed, {2}));
  for (std::size_t i = 0; i < cfg.normals; ++i) {
    FgwsExample ex;
    ex.id = padded("fn", i);
    add_normal(i, static_cast<int>(i % 2), test_rng, d.oracle, ex.tokens);
    d.test.push_back(std::move(ex));
  }
  std::uniform_int_distribution<std::size_t> rare(0, kRareWords - 1);
  for (std::size_t i = 0; i < cfg.adversaries; ++i) {
    const int gold = static_cast<int>(i % 2);
    Tokens source = random_sentence(test_rng);
    std::uniform_int_distribution<std::size_t> pos(0, source.size() - 1);
    const std::size_t r = rare(test_rng);
    const std::size_t p = pos(test_rng);
    source[p] = word("w", r);
    d.oracle.add(source, probs_for(gold, kAttackedSourceConfidence));
    FgwsExample ex;
    ex.id = padded("fa", i);
    ex.label = 1;
    ex.tokens = source;
    ex.tokens[p] = i % 2 == 0 ? word("r", r) : word("w", r) + "x";
    d.oracle.add(ex.tokens, probs_for(1 - gold, kAttackedSourceConfidence));
    d.test.push_back(std::move(ex));
  }
  return d;
}

}  // namespace repdetect
