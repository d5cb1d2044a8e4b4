#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bvxl/bayes_layers.h"
#include "bvxl/conv3d.h"
#include "bvxl/objectives.h"
#include "bvxl/rng.h"
#include "bvxl/tensor.h"

namespace bvxl {

/// Monte Carlo passes averaged per prediction unless overridden.
inline constexpr std::size_t kDefaultMcSamples = 10;

using KeyValues = std::map<std::string, std::string>;

/// MeshNet: seven 3^3 dilated ReLU layers followed by a 1^3 classifier.
struct MeshNetConfig {
  std::size_t num_classes = 50;
  std::size_t in_channels = 1;
  std::size_t filters = 96;
  /// Dilation of each 3^3 layer.
  std::vector<std::size_t> dilations{1, 1, 1, 2, 4, 8, 1};
  /// Zero padding of every layer, including the final 1^3 layer.
  std::vector<std::size_t> paddings{1, 1, 1, 2, 4, 8, 1, 0};
  Method method = Method::map;
  double bd_keep_prob = 0.9;
  SpikeSlabPrior prior;
  double temperature = kDefaultTemperature;
  double sigma_init = 0.05;
  double keep_init = 0.9;
  std::size_t subvolume_size = 32;

  /// Desk-scale preset: 8 classes, 16^3 subvolumes, narrower hidden layers, and a
  /// spike-and-slab initialization with sigma 0.005 and keep probability 0.99.
  static MeshNetConfig desk_scale(Method method, std::size_t filters = 16);

  void validate() const;
  std::size_t num_layers() const { return dilations.size() + 1; }
  std::vector<ConvSpec> layer_specs() const;
  KeyValues to_key_values() const;
  static MeshNetConfig from_key_values(const KeyValues& kv);
};

enum class ForwardMode { sample, deterministic };

enum class ParamRole : std::uint8_t { weight = 0, bias = 1, mu = 2, sigma_raw = 3, dropout_logit = 4 };
std::string role_name(ParamRole role);

template <typename T>
struct NamedParameter {
  std::size_t layer;
  ParamRole role;
  BasicTensor<T> tensor;
};

struct ParameterCensus {
  std::size_t weights = 0;  // deterministic weights, or mu for SSD
  std::size_t biases = 0;
  std::size_t sigma_raw = 0;
  std::size_t dropout_logits = 0;

  std::size_t deterministic_total() const { return weights + biases; }
  std::size_t total() const { return weights + biases + sigma_raw + dropout_logits; }
};

template <typename T>
class MeshNet {
 public:
  static MeshNet build(const MeshNetConfig& cfg, Rng& rng);

  const MeshNetConfig& config() const { return cfg_; }
  std::size_t num_layers() const { return layers_.size(); }

  /// Logits [C, S, S, S] for an input [Cin, S, S, S]. Deterministic mode disables
  /// every stochastic draw: BD skips its masks and SSD uses mu with gates fixed at 1.
  BasicTensor<T> forward(const BasicTensor<T>& input, Rng& rng, ForwardMode mode) const;

  /// Mean softmax of n_mc sampled passes, [C, S, S, S]. MAP runs a single pass.
  std::vector<T> predict_mc(const BasicTensor<T>& input, std::size_t n_mc, Rng& rng) const;

  std::vector<NamedParameter<T>> parameters() const;
  std::vector<BasicTensor<T>> trainable() const;
  /// Deterministic weights under the N(0, 1) prior (MAP and BD; biases excluded).
  std::vector<BasicTensor<T>> prior_weights() const;
  /// One KL term per spike-and-slab layer (SSD only).
  std::vector<BasicTensor<T>> layer_kls() const;
  ParameterCensus census() const;

  void save(const std::filesystem::path& path, std::uint64_t seed) const;
  static MeshNet load(const std::filesystem::path& path, std::uint64_t* seed = nullptr);

 private:
  struct Layer {
    ConvSpec spec;
    BasicTensor<T> weight;
    BasicTensor<T> bias;
    SpikeSlabConvParams<T> ssd;
  };

  MeshNetConfig cfg_;
  std::vector<Layer> layers_;
};

/// Scalar width (4 or 8 bytes) recorded in a checkpoint header.
std::size_t checkpoint_scalar_bytes(const std::filesystem::path& path);
/// Configuration recorded in a checkpoint header.
MeshNetConfig checkpoint_config(const std::filesystem::path& path);

}  // namespace bvxl
