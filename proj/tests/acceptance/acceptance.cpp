// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "oracles/oracles.hpp"
#include "repdetect/detect.hpp"
#include "repdetect/error.hpp"
#include "repdetect/fgws.hpp"
#include "repdetect/knn.hpp"
#include "repdetect/lid.hpp"
#include "repdetect/mdre.hpp"
#include "repdetect/repstore.hpp"
#include "repdetect/synthgen.hpp"
#include "test_util.hpp"

using namespace repdetect;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Shared default bundle for criteria 5 and 6.
const Bundle& default_bundle(double* gen_seconds = nullptr) {
  static testutil::TempDir dir("acceptance_bundle");
  static double elapsed = 0.0;
  static const Bundle bundle = [] {
    const auto t0 = Clock::now();
    const SynthSummary s = write_synth_bundle(SynthConfig::hard_margin(), dir.path());
    const Manifest m = load_manifest(s.manifest);
    validate_bundle(m);
    Bundle b = Bundle::load(m);
    elapsed = seconds_since(t0);
    return b;
  }();
  if (gen_seconds) *gen_seconds = elapsed;
  return bundle;
}

// Queries are drawn uniformly from the ball of radius 0.2: at k/b = 0.1 the
// k-th neighbor sits near radius 0.1^(1/d) (0.79 for d = 10), so only those
// queries keep their whole neighborhood inside the support. Estimates over
// queries from the full ball are reported alongside for comparison.
Outcome lid_ball_recovery() {
  std::string detail;
  bool ok = true;
  for (std::size_t d : {2u, 5u, 10u}) {
    const auto t0 = Clock::now();
    const MatrixF pool = to_float(gen_ball(d, 10'000, 100 + d));
    MatrixD inner = gen_ball(d, 200, 200 + d);
    for (auto& v : inner.values()) v *= 0.2;
    const MatrixF queries = to_float(inner);
    double sum = 0.0;
    for (std::size_t i = 0; i < queries.rows(); ++i) sum += lid_estimate(queries.row(i), pool, 100, 1000, 300 + i);
    const double mean = sum / 200.0;
    const double secs = seconds_since(t0);

    const MatrixF anywhere = to_float(gen_ball(d, 200, 400 + d));
    double full = 0.0;
    for (std::size_t i = 0; i < anywhere.rows(); ++i) full += lid_estimate(anywhere.row(i), pool, 100, 1000, 500 + i);

    const bool good = std::abs(mean - static_cast<double>(d)) <= 0.15 * static_cast<double>(d) && secs < 60.0;
    ok = ok && good;
    detail += fmt("d=%zu mean=%.3f (%.2fs, full-ball queries %.3f) ", d, mean, secs, full / 200.0);
  }
  return {ok, detail};
}

Outcome lid_analytic() {
  const std::vector<double> r{1.0, std::exp(1.0)};
  const double v = lid_mle(r);
  return {std::abs(v - 2.0) <= 1e-12, fmt("estimate=%.17g", v)};
}

Outcome knn_exactness() {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0;
  std::size_t compared = 0;
  for (int t = 0; compared < 1000; ++t) {
    const std::size_t n = 3 + rng() % 1022;
    const std::size_t d = 1 + rng() % 64;
    MatrixF base = testutil::random_matrix(n, d, rng());
    if (t % 5 == 0) {
      // Inject duplicates so ties are exercised.
      for (std::size_t i = 1; i < n; i += 3) {
        std::copy(base.row(0).begin(), base.row(0).end(), base.row(i).begin());
      }
    }
    const MatrixF q = testutil::random_matrix(1, d, rng());
    const bool exclude_zero = t % 2 == 1;
    const auto query = exclude_zero ? base.row(rng() % n) : q.row(0);
    std::size_t available = n;
    if (exclude_zero) {
      available = 0;
      for (std::size_t i = 0; i < n; ++i) available += euclidean_distance(query, base.row(i)) > 0.0;
    }
    if (available < 2) continue;
    const std::size_t k = 2 + rng() % (available - 1);
    std::vector<Neighbor> a, b;
    bool threw_a = false, threw_b = false;
    try {
      a = knn_search(query, base, k, exclude_zero, SearchPath::naive);
    } catch (const Error&) {
      threw_a = true;
    }
    try {
      b = knn_search(query, base, k, exclude_zero, SearchPath::blocked);
    } catch (const Error&) {
      threw_b = true;
    }
    ++compared;
    if (threw_a || threw_b || a != b) ++mismatches;
  }
  return {mismatches == 0, fmt("%zu mismatches in %zu instances", mismatches, compared)};
}

Outcome logistic_checks() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_grad = 0.0;
  double worst_loss = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 1 + t % 8;
    const std::size_t n = 40 + 3 * t;
    MatrixD x(n, m);
    std::vector<int> y(n);
    std::vector<double> truth(m);
    for (auto& v : truth) v = g(rng);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        x(i, j) = g(rng) * (1.0 + 0.5 * j);
        s += truth[j] * x(i, j);
      }
      y[i] = s + g(rng) > 0.0 ? 1 : 0;
    }
    y[0] = 0;
    y[1] = 1;
    std::vector<double> w(m);
    for (auto& v : w) v = g(rng);
    const double b = g(rng);
    const double l2 = 0.05 * (t % 4);
    const Objective o = logistic_objective(x, y, w, b, l2);
    const double h = 1e-5;
    for (std::size_t j = 0; j <= m; ++j) {
      auto at = [&](double delta) {
        std::vector<double> w2(w);
        double b2 = b;
        (j < m ? w2[j] : b2) += delta;
        return logistic_objective(x, y, w2, b2, l2).loss;
      };
      const double fd = (at(h) - at(-h)) / (2 * h);
      const double an = j < m ? o.grad_w[j] : o.grad_b;
      worst_grad = std::max(worst_grad, std::abs(fd - an) / std::max(1e-3, std::abs(an)));
    }

    const LogisticModel model = train_logistic(x, y);
    const MatrixD z = standardize(x, column_stats(x));
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) rows.emplace_back(z.row(i).begin(), z.row(i).end());
    const oracle::NewtonFit fit = oracle::newton_logistic(rows, y, LogisticHyperparams{}.l2);
    worst_loss = std::max(worst_loss, std::abs(model.final_loss - fit.loss));
  }
  return {worst_grad < 1e-6 && worst_loss <= 1e-8,
          fmt("max gradient rel. error %.2e, max loss gap to Newton %.2e", worst_grad, worst_loss)};
}

Outcome mdre_end_to_end() {
  const auto t0 = Clock::now();
  const Bundle& b = default_bundle();
  MdreConfig cfg;
  const FeatureTable t = mdre_feature_matrix(b, cfg);
  const DetectionResult ensemble = run_mdre(t, cfg);
  double best_single = 0.0;
  for (const auto& r : run_mdre_ablation(t, cfg)) best_single = std::max(best_single, r.report.accuracy);
  const double secs = seconds_since(t0);
  const double acc = ensemble.report.accuracy;
  return {acc >= 0.90 && acc >= best_single - 0.02 && secs < 120.0,
          fmt("ensemble=%.4f best single=%.4f pairs=%zu (%.1fs incl. generation)", acc, best_single,
              b.pair_rows().size(), secs)};
}

Outcome lid_end_to_end() {
  const Bundle& b = default_bundle();
  const std::string model = b.manifest().models().front();
  const TuneResult r = tune_k(b, model, default_k_grid(), LidConfig{}, ExperimentConfig{});
  return {r.best.report.accuracy >= 0.80,
          fmt("model=%s layers=%zu best k=%zu accuracy=%.4f", model.c_str(), b.manifest().layers(model).size(),
              r.best_k, r.best.report.accuracy)};
}

Outcome fgws_toy() {
  const FgwsDataset d = gen_fgws_toy(FgwsToyConfig{});
  const FgwsRun r = run_fgws(d, 90);
  const std::size_t adv = r.report.tp + r.report.fn;
  const std::size_t normal = r.report.fp + r.report.tn;
  const double normal_rate = static_cast<double>(r.report.fp) / static_cast<double>(normal);
  return {r.report.fn == 0 && adv > 0 && normal_rate <= 0.10,
          fmt("adversaries flagged %zu/%zu, normals flagged %zu/%zu, gamma=%.4f", r.report.tp, adv, r.report.fp,
              normal, r.gamma)};
}

Outcome lm_chance() {
  const LmScoreSet s = gen_lm_scores(10'000, 0);
  const DetectionResult r = lm_score_detector(s.scores, s.labels, ExperimentConfig{});
  return {std::abs(r.report.accuracy - 0.5) <= 0.05, fmt("accuracy=%.4f", r.report.accuracy)};
}

std::map<std::string, std::vector<std::byte>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::byte>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file_bytes(e.path());
  }
  return files;
}

Outcome determinism() {
  testutil::TempDir tmp("acceptance_cli");
  const std::string data = (tmp / "data").string();
  const std::string m = data + "/manifest.json";
  const std::vector<std::vector<std::string>> commands{
      {"synth", "--out", data, "--seed", "5", "--train", "600", "--test", "400", "--pairs", "120", "--layers", "2",
       "--lm-examples", "2000", "--fgws-validation", "200", "--fgws-normals", "100", "--fgws-adversaries", "100"},
      {"validate", "--manifest", m, "--out", (tmp / "validate").string()},
      {"lid", "--manifest", m, "--out", (tmp / "lid").string(), "--k-grid", "10,20", "--seed", "1"},
      {"mdre", "--manifest", m, "--out", (tmp / "mdre").string(), "--ablation"},
      {"fgws", "--manifest", data + "/fgws/fgws_manifest.json", "--out", (tmp / "fgws").string()},
      {"lm-baseline", "--manifest", data + "/lm_scores.json", "--out", (tmp / "lm").string()},
      {"eval", "--model", (tmp / "mdre/mdre_model.json").string(), "--features",
       (tmp / "mdre/mdre_features.json").string(), "--out", (tmp / "eval").string()},
  };
  std::string failed;
  for (const auto& args : commands) {
    const fs::path out(*(std::find(args.begin(), args.end(), "--out") + 1));
    std::ostringstream o1, e1, o2, e2;
    if (repdetect::cli::cli_main(args, o1, e1) != 0) {
      failed += args[0] + "(exit) ";
      continue;
    }
    const auto first = snapshot(out);
    if (repdetect::cli::cli_main(args, o2, e2) != 0 || snapshot(out) != first || o1.str() != o2.str()) {
      failed += args[0] + " ";
    }
  }

  std::mt19937_64 rng(99);
  std::size_t repm_bad = 0;
  for (int t = 0; t < 50; ++t) {
    MatrixF mat = testutil::random_matrix(1 + rng() % 200, 1 + rng() % 800, rng(), -1e6f, 1e6f);
    mat.values()[0] = -0.0f;
    if (mat.values().size() > 1) mat.values()[1] = 1e-42f;
    const fs::path file = tmp / "rt.repm";
    write_matrix(mat, file);
    const MatrixF back = read_matrix(file);
    if (back.rows() != mat.rows() || back.cols() != mat.cols() ||
        std::memcmp(back.values().data(), mat.values().data(), mat.values().size() * sizeof(float)) != 0) {
      ++repm_bad;
    }
  }
  return {failed.empty() && repm_bad == 0,
          failed.empty() ? std::string("7 commands byte-identical on rerun, 50 REPM round trips bit-exact")
                         : "differs: " + failed + fmt("; REPM mismatches %zu", repm_bad)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"LID dimensionality recovery on unit balls", lid_ball_recovery},
      {"analytic LID case r=(1,e), k=2", lid_analytic},
      {"kNN blocked path equals naive scan", knn_exactness},
      {"logistic gradient check and Newton optimum", logistic_checks},
      {"synthetic MDRE end to end", mdre_end_to_end},
      {"synthetic LID with tuned k", lid_end_to_end},
      {"FGWS toy corpus", fgws_toy},
      {"LM baseline at chance", lm_chance},
      {"CLI determinism and REPM round trip", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %zu: %s | %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
