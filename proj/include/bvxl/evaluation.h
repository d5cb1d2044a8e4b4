#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bvxl/dataset.h"
#include "bvxl/metrics.h"
#include "bvxl/model.h"

namespace bvxl {

/// Whole-volume predictive distribution. Called once per volume, possibly from several
/// threads at once; `rng` is a stream private to that volume.
using VolumePredictor = std::function<PredictiveOutput(const LabeledVolume&, Rng&)>;

/// z-scores v, cuts it into the model's subvolume tiles, averages n_mc sampled softmaxes
/// per tile (tile i draws from rng.split(i)) and reassembles the [C, D, H, W] result.
template <typename T>
PredictiveOutput predict_volume(const MeshNet<T>& model, const Volume& v, std::size_t n_mc, Rng& rng);

template <typename T>
VolumePredictor model_predictor(const MeshNet<T>& model, std::size_t n_mc);

/// Test hook: one-hot probabilities taken from the reference labels.
VolumePredictor oracle_predictor(int num_classes);

/// Entropy thresholds at which per-volume error ROC curves are averaged: +inf, then
/// kErrorCurvePoints evenly spaced values from ln C down to 0.
inline constexpr std::size_t kErrorCurvePoints = 201;
std::vector<double> error_curve_thresholds(int num_classes);

struct VolumeResult {
  DatasetEntry entry;
  AnalysisRecord record;  // mean_nonbg_entropy is NaN when no voxel is predicted foreground
  std::optional<double> error_auc;             // nullopt: no errors or no correct voxels
  std::vector<RocPoint> error_curve;           // on error_curve_thresholds; empty when undefined
};

struct EvaluationReport {
  std::string method;  // label used in every output row
  int num_classes = 0;
  std::vector<VolumeResult> volumes;
  double mean_dice = 0;
  double dice_standard_error = 0;
  std::vector<double> mean_dice_per_class;      // NaN for classes absent everywhere
  std::vector<RocPoint> mean_error_curve;       // threshold average over defined volumes
  double mean_error_auc = 0;
  std::size_t error_auc_defined = 0;
  std::size_t error_auc_above_half = 0;
  std::size_t error_auc_ties = 0;
  double error_sign_test_p = 1;                 // H1: AUC > 0.5; exact ties are dropped
  std::optional<RocResult> qc;                  // needs both quality labels present
};

struct EvaluationOptions {
  std::string method;
  std::uint64_t seed = 0;  // volume i predicts with Rng(seed).split(i)
  std::size_t threads = 1;
};

EvaluationReport evaluate_entries(const std::filesystem::path& dir, std::span<const DatasetEntry> entries,
                                  int num_classes, const VolumePredictor& predict, const EvaluationOptions& opt);

/// QC labels and per-method scores restricted to volumes that are labeled and scored by
/// every report; reports must list the same volumes in the same order.
struct QcTable {
  std::vector<std::string> volume_ids;
  std::vector<int> labels;                   // 1 = bad
  std::vector<std::vector<double>> scores;   // [method][volume]
};
QcTable qc_table(std::span<const EvaluationReport> reports);

struct CompareOptions {
  std::size_t n_boot = kDefaultBootstrapReplicates;
  std::size_t sample_size = 0;  // 0 = population
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Output file names relative to the evaluation directory.
std::vector<std::filesystem::path> write_evaluation(const std::filesystem::path& out,
                                                     std::span<const EvaluationReport> reports,
                                                     const std::optional<BootstrapResult>& compare);

inline constexpr const char* kRecordsHeader = "volume_id,mean_dice,mean_nonbg_entropy,quality_label,method";
inline constexpr const char* kCurveHeader = "threshold,fpr,tpr";

/// Shortest decimal text that reads back to the same double ("%.17g" trimmed by round trip).
std::string format_real(double x);

}  // namespace bvxl
