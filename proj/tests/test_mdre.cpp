#include <gtest/gtest.h>

#include <cmath>

#include "oracles/oracles.hpp"
#include "repdetect/error.hpp"
#include "repdetect/mdre.hpp"
#include "repdetect/synthgen.hpp"
#include "test_util.hpp"

using namespace repdetect;
using testutil::column;
using testutil::TempDir;

namespace {

const Bundle& synthetic_bundle() {
  static TempDir tmp("mdre_bundle");
  static const Bundle bundle = [] {
    const SynthSummary s = write_synth_bundle(SynthConfig::hard_margin(), tmp.path());
    const Manifest m = load_manifest(s.manifest);
    validate_bundle(m);
    return Bundle::load(m);
  }();
  return bundle;
}

double brute_same_label(std::span<const float> q, const MatrixF& base, const std::vector<int>& labels,
                        int label) {
  long double best = -1;
  for (std::size_t i = 0; i < base.rows(); ++i) {
    if (labels[i] != label) continue;
    long double s = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const long double d = static_cast<long double>(q[j]) - base(i, j);
      s += d * d;
    }
    if (best < 0 || s < best) best = s;
  }
  return std::sqrt(static_cast<double>(best));
}

}  // namespace

TEST(MdreFeatures, HandCheckableExample) {
  const MatrixF train = column({0, 10});
  const MatrixF normal = column({1});
  const MatrixF adv = column({9});
  const std::vector<int> train_pred{0, 1}, normal_pred{0}, adv_pred{1};
  const std::vector<std::string> nid{"n"}, aid{"a"};
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}};
  const MdreView view{"h0", &train, &normal, &adv};
  const FeatureTable t = mdre_feature_matrix(std::span(&view, 1),
                                             MdreLabels{train_pred, normal_pred, adv_pred, nid, aid, pairs});
  ASSERT_EQ(t.rows(), 2u);
  ASSERT_EQ(t.cols(), 1u);
  EXPECT_EQ(t.values(0, 0), 1.0);
  EXPECT_EQ(t.values(1, 0), 1.0);
  EXPECT_EQ(t.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(t.columns[0], "dist_h0");
  EXPECT_EQ(t.row_ids, (std::vector<std::string>{"n", "a"}));
}

TEST(MdreFeatures, DuplicateOfTrainingPointIsZero) {
  const MatrixF train = column({0, 10, 3.5f});
  const MatrixF normal = column({3.5f});
  const MatrixF adv = column({9});
  const std::vector<int> train_pred{0, 1, 0}, normal_pred{0}, adv_pred{1};
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}};
  const MdreView view{"h0", &train, &normal, &adv};
  const FeatureTable t =
      mdre_feature_matrix(std::span(&view, 1), MdreLabels{train_pred, normal_pred, adv_pred, {}, {}, pairs});
  EXPECT_EQ(t.values(0, 0), 0.0);
}

TEST(MdreFeatures, MissingLabelNamesModel) {
  const MatrixF train = column({0, 10});
  const MatrixF normal = column({1});
  const MatrixF adv = column({9});
  const std::vector<int> train_pred{0, 0}, normal_pred{0}, adv_pred{1};
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}};
  const MdreView view{"enc-b", &train, &normal, &adv};
  try {
    mdre_feature_matrix(std::span(&view, 1), MdreLabels{train_pred, normal_pred, adv_pred, {}, {}, pairs});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("enc-b"), std::string::npos) << e.what();
  }
}

TEST(MdreFeatures, MisalignedPairingIsRejected) {
  const MatrixF train = column({0, 10});
  const MatrixF normal = column({1});
  const MatrixF adv = column({9});
  const std::vector<int> train_pred{0, 1}, normal_pred{0}, adv_pred{1};
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 3}};
  const MdreView view{"h0", &train, &normal, &adv};
  EXPECT_THROW(mdre_feature_matrix(std::span(&view, 1),
                                   MdreLabels{train_pred, normal_pred, adv_pred, {}, {}, pairs}),
               DataError);
}

TEST(MdreFeatures, SyntheticColumnsMatchBruteForce) {
  const Bundle& b = synthetic_bundle();
  MdreConfig cfg;
  const FeatureTable t = mdre_feature_matrix(b, cfg);
  const std::size_t k = b.pair_rows().size();
  ASSERT_EQ(t.rows(), 2 * k);
  ASSERT_EQ(t.cols(), 3u);
  EXPECT_EQ(std::count(t.labels.begin(), t.labels.end(), 0), static_cast<long>(k));
  EXPECT_EQ(std::count(t.labels.begin(), t.labels.end(), 1), static_cast<long>(k));
  const auto& train_pred = b.predicted(Role::train);
  for (std::size_t j = 0; j < 3; ++j) {
    const std::string model = "view" + std::to_string(j);
    EXPECT_EQ(t.columns[j], "dist_" + model);
    const MatrixF& train = b.repset(model, 3, Role::train).data;
    const MatrixF& normal = b.repset(model, 3, Role::normal).data;
    const MatrixF& adv = b.repset(model, 3, Role::adversarial).data;
    for (std::size_t i = 0; i < k; i += 7) {
      const auto [n, a] = b.pair_rows()[i];
      EXPECT_NEAR(t.values(i, j), brute_same_label(normal.row(n), train, train_pred, b.predicted(Role::normal)[n]),
                  1e-9);
      EXPECT_NEAR(t.values(k + i, j),
                  brute_same_label(adv.row(a), train, train_pred, b.predicted(Role::adversarial)[a]), 1e-9);
    }
  }
}

TEST(MdreFeatures, ThreadCountDoesNotMatter) {
  const Bundle& b = synthetic_bundle();
  MdreConfig cfg;
  cfg.threads = 1;
  const FeatureTable one = mdre_feature_matrix(b, cfg);
  cfg.threads = 5;
  EXPECT_EQ(one.values, mdre_feature_matrix(b, cfg).values);
}

TEST(MdreFeatures, AdversariesDominateNormals) {
  const Bundle& b = synthetic_bundle();
  const FeatureTable t = mdre_feature_matrix(b, MdreConfig{});
  const std::size_t k = t.rows() / 2;
  ASSERT_GE(k, 200u);
  for (std::size_t j = 0; j < t.cols(); ++j) {
    std::vector<double> normal, adv;
    for (std::size_t i = 0; i < k; ++i) {
      normal.push_back(t.values(i, j));
      adv.push_back(t.values(k + i, j));
    }
    EXPECT_LT(oracle::mann_whitney_p(normal, adv), 0.01) << t.columns[j];
  }
}

TEST(RunMdre, HardMarginAccuracyAndDeterminism) {
  const Bundle& b = synthetic_bundle();
  MdreConfig cfg;
  const FeatureTable t = mdre_feature_matrix(b, cfg);
  const DetectionResult r = run_mdre(t, cfg);
  EXPECT_GE(r.report.accuracy, 0.9);
  EXPECT_EQ(r.report.detector, "mdre");
  EXPECT_EQ(r.report.total(), t.rows() - static_cast<std::size_t>(std::ceil(0.8 * t.rows() - 1e-9)));
  EXPECT_EQ(r.report.to_json().dump(), run_mdre(t, cfg).report.to_json().dump());
  EXPECT_TRUE(r.report.standardized);
}

TEST(RunMdre, ColumnPermutationLeavesAccuracy) {
  const Bundle& b = synthetic_bundle();
  MdreConfig cfg;
  cfg.model_ids = {"view0", "view1", "view2"};
  const FeatureTable t = mdre_feature_matrix(b, cfg);
  cfg.model_ids = {"view2", "view0", "view1"};
  const FeatureTable p = mdre_feature_matrix(b, cfg);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    EXPECT_EQ(p.values(i, 0), t.values(i, 2));
    EXPECT_EQ(p.values(i, 1), t.values(i, 0));
  }
  const auto a = run_mdre(t, cfg).report;
  const auto c = run_mdre(p, cfg).report;
  EXPECT_EQ(a.accuracy, c.accuracy);
  EXPECT_EQ(a.test_indices, c.test_indices);
}

TEST(RunMdre, AblationHasOneRunPerModel) {
  const Bundle& b = synthetic_bundle();
  MdreConfig cfg;
  const FeatureTable t = mdre_feature_matrix(b, cfg);
  const auto runs = run_mdre_ablation(t, cfg);
  ASSERT_EQ(runs.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(runs[j].model.dims(), 1u);
    EXPECT_EQ(runs[j].report.detector, "mdre_dist_view" + std::to_string(j));
    EXPECT_EQ(runs[j].report.test_indices, run_mdre(t, cfg).report.test_indices);
  }
}

TEST(RunMdre, PerfectlySeparatedFeatures) {
  const std::size_t k = 50;
  FeatureTable t;
  t.columns = {"d"};
  t.values = MatrixD(2 * k, 1);
  for (std::size_t i = 0; i < 2 * k; ++i) {
    t.row_ids.push_back(std::to_string(i));
    t.labels.push_back(i < k ? 0 : 1);
    t.values(i, 0) = i < k ? 0.0 : 10.0;
  }
  EXPECT_EQ(run_mdre(t, MdreConfig{}).report.accuracy, 1.0);
}

TEST(RunMdre, UnknownModelIsDataError) {
  MdreConfig cfg;
  cfg.model_ids = {"nope"};
  EXPECT_THROW(mdre_feature_matrix(synthetic_bundle(), cfg), DataError);
}
