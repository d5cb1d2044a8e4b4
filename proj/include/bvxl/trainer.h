#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bvxl/model.h"
#include "bvxl/objectives.h"

namespace bvxl {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t minibatch_size = 8;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  /// Receives best.ckpt, last.ckpt and train_log.csv; empty disables file output.
  std::filesystem::path checkpoint_dir;
  /// Fraction of volumes held out for validation when a dataset is split by the caller.
  double validation_fraction = 0.1;
  /// Writes wall_seconds as 0 so logs are byte-identical across reruns.
  bool deterministic = false;

  void validate() const;
};

/// Per-parameter Adam moments. Moments are kept in double regardless of T.
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

/// One Adam update with bias correction. grads[i] may be empty (treated as zero).
/// Throws ShapeError when a gradient or state buffer does not match its parameter.
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, const std::vector<std::span<const T>>& grads, AdamState& state,
               const TrainConfig& cfg);

/// One training example: a [Cin, s, s, s] input tile and its s^3 labels.
struct Subvolume {
  std::vector<float> input;
  std::vector<std::int32_t> labels;
};

struct EpochLog {
  std::size_t epoch = 0;   // 1-based
  std::size_t step = 0;    // cumulative Adam steps
  double train_loss = 0;   // mean per-voxel cross-entropy over the epoch
  double val_dice = 0;     // mean Dice over validation subvolumes, 1 sample each
  double val_entropy = 0;  // mean voxel entropy over validation subvolumes
  double wall_seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_val_dice = -1;
};

/// Return false to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochLog&)>;

inline constexpr const char* kTrainLogHeader = "epoch,step,train_loss,val_dice,val_entropy,wall_seconds";

/// Shuffled mini-batch Adam on the MAP objective (MAP, BD) or the negative ELBO (SSD).
/// objective.dataset_size must equal train.size(); a short final batch is scaled by
/// N / |batch|. Throws NumericalError naming the first non-finite tensor.
template <typename T>
TrainResult train(MeshNet<T>& model, std::span<const Subvolume> train_set, std::span<const Subvolume> val_set,
                  const TrainConfig& cfg, const ObjectiveConfig& objective, const EpochCallback& on_epoch = {});

/// Mean Dice and mean voxel entropy of single-sample predictions.
template <typename T>
std::pair<double, double> validate_model(const MeshNet<T>& model, std::span<const Subvolume> val_set, Rng& rng);

std::string format_log_row(const EpochLog& row);

}  // namespace bvxl
