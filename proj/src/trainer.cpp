#include "bvxl/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bvxl/metrics.h"

namespace bvxl {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in (0, 1)");
  if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
  if (minibatch_size < 1) throw ConfigError("minibatch size must be at least 1");
  if (!(validation_fraction >= 0 && validation_fraction < 1))
    throw ConfigError("validation fraction must lie in [0, 1)");
}

template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, const std::vector<std::span<const T>>& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (grads.size() != params.size())
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: optimizer state was built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].numel() || (!grads[i].empty() && grads[i].size() != params[i].numel()))
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has shape " +
                       shape_string(params[i].shape()) + " but its gradient or moments differ");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grads[i].empty() ? 0.0 : static_cast<double>(grads[i][k]);
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      theta[k] = static_cast<T>(theta[k] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

namespace {

template <typename T>
BasicTensor<T> to_tensor(const Subvolume& s, std::size_t channels, std::size_t side) {
  const std::size_t n = channels * side * side * side;
  if (s.input.size() != n || s.labels.size() != side * side * side)
    throw ShapeError("subvolume does not hold " + std::to_string(channels) + " x " + std::to_string(side) + "^3 voxels");
  return BasicTensor<T>({channels, side, side, side}, std::vector<T>(s.input.begin(), s.input.end()));
}

template <typename T>
bool all_finite(std::span<const T> xs) {
  return std::all_of(xs.begin(), xs.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
[[noreturn]] void abort_non_finite(const MeshNet<T>& model, const std::vector<BasicTensor<T>>& logits,
                                   std::size_t epoch, std::size_t step) {
  std::string where = "loss";
  bool found = false;
  for (const auto& p : model.parameters())
    if (!all_finite(p.tensor.values()) || !all_finite(p.tensor.grad())) {
      where = "layer " + std::to_string(p.layer + 1) + " " + role_name(p.role) +
              (all_finite(p.tensor.values()) ? " gradient" : "");
      found = true;
      break;
    }
  if (!found)
    for (std::size_t i = 0; i < logits.size(); ++i)
      if (!all_finite(logits[i].values())) {
        where = "logits of batch item " + std::to_string(i);
        break;
      }
  throw NumericalError("non-finite value in " + where + " at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
}

double voxel_mean(std::span<const float> xs) {
  double s = 0;
  for (float x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

std::string format_log_row(const EpochLog& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.3f", row.epoch, row.step, row.train_loss, row.val_dice,
                row.val_entropy, row.wall_seconds);
  return buf;
}

template <typename T>
std::pair<double, double> validate_model(const MeshNet<T>& model, std::span<const Subvolume> val_set, Rng& rng) {
  const auto& mc = model.config();
  const std::size_t s = mc.subvolume_size;
  double dice = 0, entropy = 0;
  for (const auto& sv : val_set) {
    const auto probs = model.predict_mc(to_tensor<T>(sv, mc.in_channels, s), 1, rng);
    const auto out = PredictiveOutput::from_probabilities(Dims{s, s, s}, mc.num_classes,
                                                          std::vector<float>(probs.begin(), probs.end()));
    dice += mean_dice(out.argmax_labels, sv.labels, static_cast<int>(mc.num_classes)).mean;
    entropy += voxel_mean(out.predictive_entropy);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, val_set.size()));
  return {dice / n, entropy / n};
}

template <typename T>
TrainResult train(MeshNet<T>& model, std::span<const Subvolume> train_set, std::span<const Subvolume> val_set,
                  const TrainConfig& cfg, const ObjectiveConfig& objective, const EpochCallback& on_epoch) {
  cfg.validate();
  objective.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (objective.dataset_size != train_set.size())
    throw ConfigError("train: objective N = " + std::to_string(objective.dataset_size) + " but the training set has " +
                      std::to_string(train_set.size()) + " subvolumes");
  if (objective.method != model.config().method) throw ConfigError("train: objective and model methods differ");

  const auto& mc = model.config();
  const std::size_t side = mc.subvolume_size;
  const double voxels = static_cast<double>(side * side * side);
  Rng root(cfg.seed);
  Rng order_rng = root.split(101);
  Rng noise_rng = root.split(102);
  Rng val_rng = root.split(103);

  std::ofstream log_file;
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    log_file.open(cfg.checkpoint_dir / "train_log.csv", std::ios::trunc);
    if (!log_file) throw DataError("cannot write " + (cfg.checkpoint_dir / "train_log.csv").string());
    log_file << kTrainLogHeader << "\n";
  }

  auto params = model.trainable();
  AdamState state;
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    double ce_total = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.minibatch_size);
      ObjectiveConfig batch_obj = objective;
      batch_obj.minibatch_size = end - start;

      std::vector<BasicTensor<T>> logits;
      std::vector<std::span<const std::int32_t>> labels;
      for (std::size_t k = start; k < end; ++k) {
        const Subvolume& sv = train_set[order[k]];
        logits.push_back(model.forward(to_tensor<T>(sv, mc.in_channels, side), noise_rng, ForwardMode::sample));
        labels.emplace_back(sv.labels);
      }
      {
        NoGradGuard no_grad;
        for (std::size_t k = 0; k < logits.size(); ++k)
          ce_total += static_cast<double>(softmax_cross_entropy(logits[k], labels[k]).item());
      }
      const BasicTensor<T> loss = objective.method == Method::ssd
                                      ? elbo_loss(logits, labels, model.layer_kls(), batch_obj)
                                      : map_loss(logits, labels, model.prior_weights(), batch_obj);
      for (auto& p : params) p.zero_grad();
      loss.backward();
      if (!std::isfinite(static_cast<double>(loss.item()))) abort_non_finite(model, logits, epoch, result.steps + 1);

      std::vector<std::span<const T>> grads;
      for (const auto& p : params) grads.push_back(p.grad());
      adam_step(params, grads, state, cfg);
      ++result.steps;
    }

    EpochLog row;
    row.epoch = epoch;
    row.step = result.steps;
    row.train_loss = ce_total / (static_cast<double>(train_set.size()) * voxels);
    if (!val_set.empty()) std::tie(row.val_dice, row.val_entropy) = validate_model(model, val_set, val_rng);
    row.wall_seconds =
        cfg.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
    if (log_file) log_file << format_log_row(row) << "\n" << std::flush;

    if (row.val_dice > result.best_val_dice) {
      result.best_val_dice = row.val_dice;
      result.best_epoch = epoch;
      if (!cfg.checkpoint_dir.empty()) model.save(cfg.checkpoint_dir / "best.ckpt", cfg.seed);
    }
    if (on_epoch && !on_epoch(row)) break;
  }
  if (!cfg.checkpoint_dir.empty()) model.save(cfg.checkpoint_dir / "last.ckpt", cfg.seed);
  return result;
}

template void adam_step<float>(std::vector<TensorF>&, const std::vector<std::span<const float>>&, AdamState&,
                               const TrainConfig&);
template void adam_step<double>(std::vector<Tensor>&, const std::vector<std::span<const double>>&, AdamState&,
                                const TrainConfig&);
template TrainResult train<float>(MeshNet<float>&, std::span<const Subvolume>, std::span<const Subvolume>,
                                  const TrainConfig&, const ObjectiveConfig&, const EpochCallback&);
template TrainResult train<double>(MeshNet<double>&, std::span<const Subvolume>, std::span<const Subvolume>,
                                   const TrainConfig&, const ObjectiveConfig&, const EpochCallback&);
template std::pair<double, double> validate_model<float>(const MeshNet<float>&, std::span<const Subvolume>, Rng&);
template std::pair<double, double> validate_model<double>(const MeshNet<double>&, std::span<const Subvolume>, Rng&);

}  // namespace bvxl
