#pragma once

// Desk-scale synthetic bundles.
//
// Each class lives near a low-dimensional affine submanifold of a latent
// space. Several "representation models" are fixed random linear maps of
// the latent points (one per model and layer) plus small noise. A linear
// target classifier is fit on latent training points, and adversaries are
// crafted by walking correctly classified test points toward the nearest
// other-class mean until the prediction flips, then overshooting by a
// margin. Crafting happens in latent space; every view sees the same edit.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdetect/detect.hpp"
#include "repdetect/fgws.hpp"
#include "repdetect/matrix.hpp"
#include "repdetect/repstore.hpp"

namespace repdetect {

struct SynthConfig {
  int num_classes = 2;
  std::size_t latent_dims = 8;
  std::size_t intrinsic_dims = 2;  // dimension of each class submanifold
  std::size_t view_count = 3;      // m representation models
  std::size_t view_dims = 32;
  std::size_t layer_count = 4;     // layers per representation model
  double class_separation = 8.0;   // pairwise distance of generated class means
  std::vector<std::vector<double>> class_means;  // overrides class_separation when set
  double class_spread = 1.0;       // std along the submanifold
  double off_manifold_spread = 0.05;
  double view_noise = 0.02;
  std::size_t n_train = 2000;
  std::size_t n_test = 1500;       // candidates for crafting
  std::size_t pairs = 500;         // k
  double adversary_margin = 0.5;   // latent distance past the decision boundary
  std::uint64_t seed = 0;

  // Adversaries land clearly off every class submanifold.
  static SynthConfig hard_margin();

  // Throws DomainError on invalid fields.
  void check() const;
  nlohmann::json to_json() const;
};

struct LatentData {
  MatrixD means;  // num_classes x latent_dims
  MatrixD train;
  std::vector<int> train_labels;
  MatrixD test;
  std::vector<int> test_labels;
};

LatentData gen_mixture(const SynthConfig& config);

// Dense view_dims x latent_dims map for (view, layer), fixed by config.seed.
MatrixD view_map(const SynthConfig& config, std::size_t view, std::size_t layer);

// rows of latent * map^T plus N(0, noise^2) per entry.
MatrixF project(const MatrixD& latent, const MatrixD& map, double noise, std::uint64_t noise_seed);

// One RepSet per representation model at `layer`.
std::vector<RepSet> gen_views(const MatrixD& latent, std::span<const std::string> ids, Role role,
                              int layer, const SynthConfig& config);

// One-vs-rest logistic models over latent points; predicts the argmax logit
// (ties to the smaller class).
class LinearPredictor {
 public:
  static LinearPredictor fit(const MatrixD& x, std::span<const int> labels, int num_classes);

  int predict(std::span<const double> x) const;
  std::vector<int> predict_all(const MatrixD& x) const;
  double accuracy(const MatrixD& x, std::span<const int> labels) const;
  int num_classes() const noexcept { return static_cast<int>(models_.size()); }

 private:
  std::vector<LogisticModel> models_;
};

LinearPredictor toy_target(const MatrixD& train, std::span<const int> labels, int num_classes);

struct CraftedAdversaries {
  std::vector<std::size_t> source_rows;  // test rows that were attacked
  MatrixD points;                        // one adversarial point per source row
  std::vector<int> predicted;            // prediction at the adversarial point
  std::vector<double> boundary_steps;    // fraction of the segment to the flip
  std::size_t unflippable = 0;
  std::size_t examined = 0;
};

// Crafts up to `config.pairs` adversaries from correctly classified test
// rows, in row order. Binary search tolerance on the step is 1e-6.
CraftedAdversaries craft_adversaries(const LatentData& data, const LinearPredictor& predictor,
                                     const SynthConfig& config);

struct SynthSummary {
  std::filesystem::path manifest;
  std::size_t pairs = 0;
  std::size_t unflippable = 0;
  double target_train_accuracy = 0.0;
  double target_test_accuracy = 0.0;

  nlohmann::json to_json() const;
};

// Generates and writes a complete bundle (manifest, predictions, matrices).
// Throws DataError when fewer than config.pairs adversaries can be crafted.
SynthSummary write_synth_bundle(const SynthConfig& config, const std::filesystem::path& dir);

// Uniform points in the unit d-ball.
MatrixD gen_ball(std::size_t d, std::size_t n, std::uint64_t seed);

// Language-model score set whose scores depend on length only: per-token
// log-probabilities share one distribution across classes, and length is
// drawn independently of the label.
struct LmScoreSet {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::size_t> lengths;
};
LmScoreSet gen_lm_scores(std::size_t n, std::uint64_t seed);
void write_lm_scores(const LmScoreSet& set, const std::string& dataset_name,
                     const std::filesystem::path& file);
LmScoreSet read_lm_scores(const std::filesystem::path& file);

// FGWS toy corpus: normals use frequent words (some carry a moderately rare
// word whose substitution barely moves the confidence); adversaries swap
// one frequent word for a rare word or an out-of-vocabulary typo, and the
// oracle restores the original confidence when the swap is undone.
struct FgwsToyConfig {
  std::size_t validation = 1000;
  std::size_t normals = 500;
  std::size_t adversaries = 500;
  std::uint64_t seed = 0;
};
FgwsDataset gen_fgws_toy(const FgwsToyConfig& config);

MatrixF to_float(const MatrixD& m);

}  // namespace repdetect
