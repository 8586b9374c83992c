#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "repdetect/detect.hpp"
#include "repdetect/error.hpp"
#include "repdetect/feature_table.hpp"
#include "repdetect/fgws.hpp"
#include "repdetect/lid.hpp"
#include "repdetect/mdre.hpp"
#include "repdetect/repstore.hpp"
#include "repdetect/synthgen.hpp"

namespace repdetect::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t k = 20;
  std::string k_grid;
  std::size_t batch_size = 100;
  std::vector<std::string> models;
  std::vector<int> layers;
  int layer = kLastLayer;
  double l2 = 1e-4;
  int delta = 90;
  std::optional<double> gamma;
  std::size_t threads = 0;
  bool ablation = false;
  std::string model_file;
  std::string features_file;

  SynthConfig synth;
  std::size_t lm_examples = 10'000;
  FgwsToyConfig fgws_toy;
};

void write_json(const fs::path& file, const json& j) { write_text_file(file, j.dump(2) + "\n"); }

fs::path out_dir(const Options& o) {
  fs::path dir(o.out);
  fs::create_directories(dir);
  return dir;
}

LogisticHyperparams hyperparams(const Options& o) {
  LogisticHyperparams hp;
  hp.l2 = o.l2;
  return hp;
}

std::vector<std::size_t> parse_k_grid(const std::string& text) {
  if (text == "default") return default_k_grid();
  std::vector<std::size_t> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      grid.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--k-grid", "'" + item + "' is not a positive integer");
    }
  }
  if (grid.empty()) throw CLI::ValidationError("--k-grid", "empty grid");
  return grid;
}

struct LoadedBundle {
  Manifest manifest;
  BundleReport report;
  Bundle bundle;
};

LoadedBundle load_bundle(const std::string& path) {
  Manifest m = load_manifest(path);
  BundleReport r = validate_bundle(m);
  Bundle b = Bundle::load(m);
  return {std::move(m), std::move(r), std::move(b)};
}

void stamp(EvalReport& r, const Manifest& m, const json& run) {
  r.dataset = m.dataset_name;
  r.attack_tag = m.attack_tag;
  r.config["run"] = run;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& o, std::ostream& out) {
  SynthConfig cfg = o.synth;
  cfg.seed = o.seed;
  const fs::path dir = out_dir(o);
  const SynthSummary s = write_synth_bundle(cfg, dir);

  FgwsToyConfig fc = o.fgws_toy;
  fc.seed = o.seed;
  write_fgws_dataset(gen_fgws_toy(fc), dir / "fgws");
  write_lm_scores(gen_lm_scores(o.lm_examples, o.seed), "synthetic-lm", dir / "lm_scores.json");

  json run = {{"command", "synth"},
              {"out", o.out},
              {"seed", o.seed},
              {"synth", cfg.to_json()},
              {"lm_examples", o.lm_examples},
              {"fgws", {{"validation", fc.validation}, {"normals", fc.normals}, {"adversaries", fc.adversaries}}}};
  json summary = s.to_json();
  summary["run"] = run;
  write_json(dir / "synth_summary.json", summary);
  out << "synth: " << s.pairs << " pairs, target test accuracy " << s.target_test_accuracy << " -> "
      << (dir / "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_validate(const Options& o, std::ostream& out) {
  const Manifest m = load_manifest(o.manifest);
  json report = validate_bundle(m).to_json();
  report["run"] = {{"command", "validate"}, {"manifest", o.manifest}};
  if (o.out.empty()) {
    out << report.dump(2) << "\n";
  } else {
    const fs::path file = out_dir(o) / "validate_report.json";
    write_json(file, report);
    out << "validate: ok -> " << file.string() << "\n";
  }
  return kExitOk;
}

int cmd_lid(const Options& o, std::ostream& out) {
  const LoadedBundle lb = load_bundle(o.manifest);
  const std::vector<std::string> all = lb.manifest.models();
  std::string model;
  if (o.models.empty()) {
    model = all.front();
  } else if (o.models.size() == 1) {
    model = o.models.front();
  } else {
    throw CLI::ValidationError("--models", "lid takes exactly one model");
  }

  LidConfig cfg;
  cfg.k = o.k;
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  cfg.layers = o.layers;
  cfg.threads = o.threads;
  ExperimentConfig exp{0.8, o.seed, hyperparams(o)};

  json run = {{"command", "lid"},     {"manifest", o.manifest},   {"out", o.out},
              {"seed", o.seed},       {"model", model},           {"layers", o.layers},
              {"k", o.k},             {"batch_size", o.batch_size}, {"l2", o.l2},
              {"k_grid", o.k_grid}};
  const fs::path dir = out_dir(o);

  FeatureTable features;
  DetectionResult result;
  if (o.k_grid.empty()) {
    features = lid_bundle_features(lb.bundle, model, cfg);
    result = run_detection(features, exp, "lid");
  } else {
    const auto grid = parse_k_grid(o.k_grid);
    TuneResult tuned = tune_k(lb.bundle, model, grid, cfg, exp);
    json table = tuned.table_json();
    table["run"] = run;
    write_json(dir / "lid_tune.json", table);
    features = std::move(tuned.best_features);
    result = std::move(tuned.best);
  }
  features.meta["run"] = run;
  stamp(result.report, lb.manifest, run);
  write_feature_table(features, dir / "lid_features.json");
  write_json(dir / "lid_eval.json", result.report.to_json());
  write_json(dir / "lid_model.json", result.model.to_json());
  out << "lid: accuracy " << result.report.accuracy << " (" << result.report.total() << " test rows) -> "
      << (dir / "lid_eval.json").string() << "\n";
  return kExitOk;
}

int cmd_mdre(const Options& o, std::ostream& out) {
  const LoadedBundle lb = load_bundle(o.manifest);
  MdreConfig cfg;
  cfg.model_ids = o.models;
  cfg.layer = o.layer;
  cfg.split_seed = o.seed;
  cfg.hyperparams = hyperparams(o);
  cfg.threads = o.threads;
  json run = {{"command", "mdre"}, {"manifest", o.manifest}, {"out", o.out}, {"seed", o.seed},
              {"models", o.models}, {"layer", o.layer},       {"l2", o.l2},   {"ablation", o.ablation}};
  const fs::path dir = out_dir(o);

  FeatureTable features = mdre_feature_matrix(lb.bundle, cfg);
  features.meta["run"] = run;
  DetectionResult result = run_mdre(features, cfg);
  stamp(result.report, lb.manifest, run);
  write_feature_table(features, dir / "mdre_features.json");
  write_json(dir / "mdre_eval.json", result.report.to_json());
  write_json(dir / "mdre_model.json", result.model.to_json());
  if (o.ablation) {
    json rows = json::array();
    for (auto& r : run_mdre_ablation(features, cfg)) {
      stamp(r.report, lb.manifest, run);
      rows.push_back(r.report.to_json());
    }
    write_json(dir / "mdre_ablation.json", {{"ensemble_accuracy", result.report.accuracy}, {"single_view", rows}});
  }
  out << "mdre: accuracy " << result.report.accuracy << " (" << result.report.total() << " test rows) -> "
      << (dir / "mdre_eval.json").string() << "\n";
  return kExitOk;
}

int cmd_fgws(const Options& o, std::ostream& out) {
  const FgwsDataset d = load_fgws_dataset(o.manifest);
  const FgwsRun r = run_fgws(d, o.delta, o.gamma);
  json run = {{"command", "fgws"}, {"manifest", o.manifest}, {"out", o.out}, {"delta", o.delta}};
  run["gamma"] = o.gamma ? json(*o.gamma) : json(nullptr);
  EvalReport report = r.report;
  report.config["run"] = run;
  const fs::path dir = out_dir(o);
  json verdicts = r.verdicts_json(d);
  verdicts["run"] = run;
  write_json(dir / "fgws_verdicts.json", verdicts);
  write_json(dir / "fgws_eval.json", report.to_json());
  out << "fgws: accuracy " << report.accuracy << ", gamma " << r.gamma << ", threshold " << r.threshold
      << " -> " << (dir / "fgws_eval.json").string() << "\n";
  return kExitOk;
}

int cmd_lm_baseline(const Options& o, std::ostream& out) {
  const LmScoreSet s = read_lm_scores(o.manifest);
  ExperimentConfig exp{0.8, o.seed, hyperparams(o)};
  DetectionResult r = lm_score_detector(s.scores, s.labels, exp);
  json run = {{"command", "lm-baseline"}, {"manifest", o.manifest}, {"out", o.out}, {"seed", o.seed}, {"l2", o.l2}};
  r.report.config["run"] = run;
  const fs::path dir = out_dir(o);
  write_json(dir / "lm_eval.json", r.report.to_json());
  out << "lm-baseline: accuracy " << r.report.accuracy << " -> " << (dir / "lm_eval.json").string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  std::ifstream in(o.model_file);
  if (!in) throw IoError("eval: cannot open model '" + o.model_file + "'");
  LogisticModel model;
  try {
    model = LogisticModel::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError("eval: model '" + o.model_file + "': " + e.what());
  }
  const FeatureTable t = read_feature_table(o.features_file);
  t.check();
  if (t.cols() != model.dims()) {
    throw DataError("eval: features '" + o.features_file + "' have " + std::to_string(t.cols()) +
                    " columns, model expects " + std::to_string(model.dims()));
  }
  EvalReport r = evaluate(model, t.values, t.labels);
  r.detector = t.meta.value("detector", std::string{});
  r.dataset = t.meta.value("dataset", std::string{});
  r.attack_tag = t.meta.value("attack_tag", std::string{});
  r.config["run"] = {{"command", "eval"}, {"model", o.model_file}, {"features", o.features_file}, {"out", o.out}};
  if (o.out.empty()) {
    out << r.to_json().dump(2) << "\n";
  } else {
    const fs::path file = out_dir(o) / "eval_report.json";
    write_json(file, r.to_json());
    out << "eval: accuracy " << r.accuracy << " -> " << file.string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Representation-based adversarial example detection toolkit", "repdetect"};
  app.require_subcommand(1);

  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  };
  auto add_bundle = [&](CLI::App* c, const char* help) {
    c->add_option("--manifest", o.manifest, help)->required()->check(CLI::ExistingFile);
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic bundle, FGWS toy corpus and LM score set");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--seed", o.seed, "Generator seed");
  synth->add_option("--classes", o.synth.num_classes, "Number of classes")->check(CLI::PositiveNumber);
  synth->add_option("--latent-dims", o.synth.latent_dims, "Latent dimensionality");
  synth->add_option("--intrinsic-dims", o.synth.intrinsic_dims, "Class submanifold dimensionality");
  synth->add_option("--views", o.synth.view_count, "Representation models (m)");
  synth->add_option("--view-dims", o.synth.view_dims, "Representation dimensionality");
  synth->add_option("--layers", o.synth.layer_count, "Layers per representation model");
  synth->add_option("--separation", o.synth.class_separation, "Distance between class means");
  synth->add_option("--spread", o.synth.class_spread, "Std along each class submanifold");
  synth->add_option("--off-manifold", o.synth.off_manifold_spread, "Std off the class submanifold");
  synth->add_option("--noise", o.synth.view_noise, "Per-entry view noise std");
  synth->add_option("--train", o.synth.n_train, "Training examples");
  synth->add_option("--test", o.synth.n_test, "Test candidates for crafting");
  synth->add_option("--pairs", o.synth.pairs, "Normal/adversarial pairs");
  synth->add_option("--margin", o.synth.adversary_margin, "Latent overshoot past the boundary");
  synth->add_option("--lm-examples", o.lm_examples, "Examples in lm_scores.json");
  synth->add_option("--fgws-validation", o.fgws_toy.validation, "FGWS validation sequences");
  synth->add_option("--fgws-normals", o.fgws_toy.normals, "FGWS normal test examples");
  synth->add_option("--fgws-adversaries", o.fgws_toy.adversaries, "FGWS adversarial test examples");

  auto* validate = app.add_subcommand("validate", "Check a bundle and print its report");
  add_bundle(validate, "Bundle manifest");
  validate->add_option("--out", o.out, "Write validate_report.json here instead of stdout");

  auto* lid = app.add_subcommand("lid", "LID features and detector");
  add_bundle(lid, "Bundle manifest");
  lid->add_option("--out", o.out, "Output directory")->required();
  lid->add_option("--seed", o.seed, "Sampling and split seed");
  lid->add_option("--k", o.k, "Neighbors per estimate")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 30));
  lid->add_option("--k-grid", o.k_grid, "Tune k over a comma list, or 'default'");
  lid->add_option("--batch-size", o.batch_size, "Reference sample size b")->check(CLI::PositiveNumber);
  lid->add_option("--models", o.models, "Representation model (one)")->delimiter(',');
  lid->add_option("--layer", o.layers, "Layers to use (repeatable; default all)")->delimiter(',');
  lid->add_option("--l2", o.l2, "Detector L2 penalty")->check(CLI::NonNegativeNumber);
  add_threads(lid);

  auto* mdre = app.add_subcommand("mdre", "MDRE features and detector");
  add_bundle(mdre, "Bundle manifest");
  mdre->add_option("--out", o.out, "Output directory")->required();
  mdre->add_option("--seed", o.seed, "Split seed");
  mdre->add_option("--models", o.models, "Representation models (default all)")->delimiter(',');
  mdre->add_option("--layer", o.layer, "Layer per model (-1 = last)");
  mdre->add_option("--l2", o.l2, "Detector L2 penalty")->check(CLI::NonNegativeNumber);
  mdre->add_flag("--ablation", o.ablation, "Also run one detector per model");
  add_threads(mdre);

  auto* fgws = app.add_subcommand("fgws", "Frequency-guided word substitution baseline");
  add_bundle(fgws, "FGWS manifest");
  fgws->add_option("--out", o.out, "Output directory")->required();
  fgws->add_option("--delta", o.delta, "Frequency percentile (0, 10, ..., 100)");
  fgws->add_option("--gamma", o.gamma, "Fixed confidence-drop threshold (skips calibration)");

  auto* lm = app.add_subcommand("lm-baseline", "Language-model score baseline");
  add_bundle(lm, "LM score file");
  lm->add_option("--out", o.out, "Output directory")->required();
  lm->add_option("--seed", o.seed, "Split seed");
  lm->add_option("--l2", o.l2, "Detector L2 penalty")->check(CLI::NonNegativeNumber);

  auto* ev = app.add_subcommand("eval", "Re-score a saved detector on a feature table");
  ev->add_option("--model", o.model_file, "Model JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--features", o.features_file, "Feature table header JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", o.out, "Write eval_report.json here instead of stdout");

  std::vector<std::string> argv_store{"repdetect"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (validate->parsed()) return cmd_validate(o, out);
    if (lid->parsed()) return cmd_lid(o, out);
    if (mdre->parsed()) return cmd_mdre(o, out);
    if (fgws->parsed()) return cmd_fgws(o, out);
    if (lm->parsed()) return cmd_lm_baseline(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  }
  return kExitUsage;
}

}  // namespace repdetect::cli
