#include "repdetect/mdre.hpp"

#include <algorithm>
#include <set>

#include "repdetect/error.hpp"
#include "repdetect/knn.hpp"
#include "repdetect/parallel.hpp"

namespace repdetect {

using nlohmann::json;

json MdreConfig::to_json() const {
  return {{"model_ids", model_ids},
          {"layer", layer},
          {"split_seed", split_seed},
          {"split_fraction", split_fraction},
          {"hyperparams", hyperparams.to_json()}};
}

FeatureTable mdre_feature_matrix(std::span<const MdreView> views, const MdreLabels& labels,
                                 std::size_t threads) {
  if (views.empty()) throw DomainError("mdre: at least one representation model is required");
  const std::size_t k = labels.pairs.size();
  if (k == 0) throw DataError("mdre: no normal/adversarial pairs");
  std::set<std::string> distinct;
  for (const auto& v : views) {
    if (!distinct.insert(v.model_id).second) throw DomainError("mdre: duplicate model '" + v.model_id + "'");
    if (v.train == nullptr || v.normal == nullptr || v.adversarial == nullptr) {
      throw DomainError("mdre: model '" + v.model_id + "' is missing a matrix");
    }
    if (v.train->rows() != labels.train_predicted.size() ||
        v.normal->rows() != labels.normal_predicted.size() ||
        v.adversarial->rows() != labels.adversarial_predicted.size()) {
      throw DataError("mdre: model '" + v.model_id + "' rows do not align with predictions");
    }
  }
  for (const auto& [n, a] : labels.pairs) {
    if (n >= labels.normal_predicted.size() || a >= labels.adversarial_predicted.size()) {
      throw DataError("mdre: misaligned pairing row (" + std::to_string(n) + ", " +
                      std::to_string(a) + ")");
    }
  }

  FeatureTable t;
  t.values = MatrixD(2 * k, views.size());
  t.row_ids.resize(2 * k);
  t.labels.assign(2 * k, 0);
  std::fill(t.labels.begin() + static_cast<std::ptrdiff_t>(k), t.labels.end(), 1);
  for (const auto& v : views) t.columns.push_back("dist_" + v.model_id);
  for (std::size_t i = 0; i < k; ++i) {
    const auto [n, a] = labels.pairs[i];
    t.row_ids[i] = n < labels.normal_ids.size() ? labels.normal_ids[n] : "normal#" + std::to_string(n);
    t.row_ids[k + i] =
        a < labels.adversarial_ids.size() ? labels.adversarial_ids[a] : "adversarial#" + std::to_string(a);
  }

  for (std::size_t j = 0; j < views.size(); ++j) {
    const MdreView& v = views[j];
    parallel_for(2 * k, threads, [&](std::size_t row) {
      const bool adversarial = row >= k;
      const auto [n, a] = labels.pairs[adversarial ? row - k : row];
      const MatrixF& source = adversarial ? *v.adversarial : *v.normal;
      const std::size_t src_row = adversarial ? a : n;
      const int label =
          adversarial ? labels.adversarial_predicted[a] : labels.normal_predicted[n];
      try {
        t.values(row, j) =
            nearest_same_label(source.row(src_row), *v.train, labels.train_predicted, label).distance;
      } catch (const Error& e) {
        throw DataError("mdre: model '" + v.model_id + "', example '" + t.row_ids[row] + "': " + e.what());
      }
    });
  }
  return t;
}

FeatureTable mdre_feature_matrix(const Bundle& bundle, const MdreConfig& config) {
  const Manifest& m = bundle.manifest();
  std::vector<std::string> models = config.model_ids.empty() ? m.models() : config.model_ids;
  std::vector<MdreView> views;
  std::vector<int> chosen_layers;
  for (const auto& model : models) {
    const auto layers = m.layers(model);
    if (layers.empty()) throw DataError("mdre: model '" + model + "' is not in the bundle");
    const int layer = config.layer == kLastLayer ? layers.back() : config.layer;
    for (Role role : kAllRoles) {
      if (!bundle.has(model, layer, role)) {
        throw DataError("mdre: bundle has no (" + model + ", " + std::to_string(layer) + ", " +
                        std::string(to_string(role)) + ") matrix");
      }
    }
    chosen_layers.push_back(layer);
    views.push_back({model, &bundle.repset(model, layer, Role::train).data,
                     &bundle.repset(model, layer, Role::normal).data,
                     &bundle.repset(model, layer, Role::adversarial).data});
  }
  MdreLabels labels{bundle.predicted(Role::train), bundle.predicted(Role::normal),
                    bundle.predicted(Role::adversarial), bundle.ids(Role::normal),
                    bundle.ids(Role::adversarial), bundle.pair_rows()};
  FeatureTable t = mdre_feature_matrix(views, labels, config.threads);
  t.meta = {{"detector", "mdre"},
            {"dataset", m.dataset_name},
            {"attack_tag", m.attack_tag},
            {"model_ids", models},
            {"layers", chosen_layers}};
  return t;
}

DetectionResult run_mdre(const FeatureTable& features, const MdreConfig& config) {
  DetectionResult r = run_detection(features, config.experiment(), "mdre");
  r.report.config["mdre"] = config.to_json();
  return r;
}

std::vector<DetectionResult> run_mdre_ablation(const FeatureTable& features, const MdreConfig& config) {
  std::vector<DetectionResult> out;
  for (std::size_t j = 0; j < features.cols(); ++j) {
    DetectionResult r =
        run_detection(features.select_columns({j}), config.experiment(), "mdre_" + features.columns[j]);
    r.report.config["mdre"] = config.to_json();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace repdetect
