#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bvxl/bayes_layers.h"
#include "bvxl/tensor.h"

namespace bvxl {

enum class Method { map, bd, ssd };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ObjectiveConfig {
  Method method = Method::map;
  std::size_t dataset_size = 1;    // N: training subvolumes
  std::size_t minibatch_size = 1;  // M
  SpikeSlabPrior prior;            // used by SSD only; MAP/BD use N(0, 1)

  void validate() const;
  double likelihood_scale() const { return static_cast<double>(dataset_size) / static_cast<double>(minibatch_size); }
};

/// 1/2 sum w^2 over every tensor: the negated N(0, 1) log-prior up to a constant.
template <typename T>
BasicTensor<T> gaussian_prior_penalty(const std::vector<BasicTensor<T>>& weights);

/// (N / M) * sum_m CE_m + 1/2 sum w^2. Method must be MAP or BD.
template <typename T>
BasicTensor<T> map_loss(const std::vector<BasicTensor<T>>& logits, const std::vector<std::span<const std::int32_t>>& labels,
                        const std::vector<BasicTensor<T>>& weights, const ObjectiveConfig& cfg);

/// (N / M) * sum_m CE_m + sum of layer KLs: the negated SGVB estimate of the ELBO.
template <typename T>
BasicTensor<T> elbo_loss(const std::vector<BasicTensor<T>>& logits, const std::vector<std::span<const std::int32_t>>& labels,
                         const std::vector<BasicTensor<T>>& layer_kls, const ObjectiveConfig& cfg);

}  // namespace bvxl
