#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bvxl/volume.h"

namespace bvxl {

/// Probabilities are clamped to at least this value inside log() when computing entropy.
inline constexpr double kProbabilityFloor = 1e-8;

/// Per-voxel predictive distribution of one scan with its argmax and entropy maps.
struct PredictiveOutput {
  Dims dims;
  std::size_t classes = 0;
  std::vector<float> probs;  // [classes, D, H, W]
  std::vector<std::int32_t> argmax_labels;
  std::vector<float> predictive_entropy;  // entropy of the MC-averaged softmax, nats

  /// Derives argmax (first maximum on ties) and natural-log entropy.
  static PredictiveOutput from_probabilities(const Dims& dims, std::size_t classes, std::vector<float> probs);
};

struct AnalysisRecord {
  std::string volume_id;
  double mean_dice = 0;
  std::vector<std::optional<double>> per_class_dice;  // nullopt: class absent from both masks
  double mean_nonbg_entropy = 0;
  Quality quality_label = Quality::unlabeled;
};

/// 2TP / (2TP + FN + FP) for class c; nullopt when the class is absent from both.
std::optional<double> dice_per_class(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth, int c);

struct DiceSummary {
  double mean = 0;
  std::vector<std::optional<double>> per_class;
};

/// Mean Dice over classes present in either mask; DataError if none is present.
DiceSummary mean_dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth, int num_classes);

/// -sum p log max(p, floor) in nats.
double voxel_entropy(std::span<const double> probs);

/// Mean entropy over voxels whose argmax is not background (class 0).
double volume_uncertainty(const PredictiveOutput& out);

struct RocPoint {
  double threshold;  // scores >= threshold are called positive
  double fpr;
  double tpr;
};

struct RocResult {
  double auc = 0;
  std::vector<RocPoint> curve;  // from (0, 0) at +inf to (1, 1)
};

/// Rank (Mann-Whitney) AUC with ties counted one half, plus the ROC curve at every
/// distinct threshold. Throws DataError unless both classes are present.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under a curve returned by roc_auc.
double trapezoid_area(std::span<const RocPoint> curve);

/// Voxel entropy as a score for misclassification. nullopt when the volume has no
/// errors or no correct voxels (the AUC is undefined).
std::optional<RocResult> error_prediction_analysis(const PredictiveOutput& out, std::span<const std::int32_t> truth);

/// Mean non-background entropy as a score for bad quality; unlabeled records are skipped.
RocResult qc_analysis(std::span<const AnalysisRecord> records);

struct PairwiseComparison {
  std::size_t a = 0, b = 0;
  /// One-sided p for "AUC_a > AUC_b": fraction of replicates with AUC_a < AUC_b,
  /// ties counted one half.
  double p_value = 0;
};

struct BootstrapResult {
  std::size_t replicates = 0;
  std::vector<double> point_auc;                // per method, full sample
  std::vector<std::vector<double>> auc_samples;  // [method][replicate]
  std::vector<PairwiseComparison> pairwise;     // every a < b
};

inline constexpr std::size_t kDefaultBootstrapReplicates = 10000;

/// Resamples volumes with replacement (sample_size of them, 0 = population size) and
/// recomputes each method's AUC. Single-class replicates are redrawn up to 100 times.
/// Replicate r uses stream Rng(seed).split(r), so results do not depend on `threads`.
BootstrapResult bootstrap_auc_compare(std::span<const int> labels, const std::vector<std::vector<double>>& scores,
                                      std::size_t n_boot, std::size_t sample_size, std::uint64_t seed,
                                      std::size_t threads = 1);

/// Binomial sign test: P(X >= successes) for X ~ Bin(trials, 1/2).
double sign_test_p(std::size_t successes, std::size_t trials);

}  // namespace bvxl
