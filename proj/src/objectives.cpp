#include "bvxl/objectives.h"

namespace bvxl {

std::string method_name(Method m) {
  switch (m) {
    case Method::map:
      return "map";
    case Method::bd:
      return "bd";
    case Method::ssd:
      return "ssd";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "map" || name == "MAP") return Method::map;
  if (name == "bd" || name == "BD") return Method::bd;
  if (name == "ssd" || name == "SSD") return Method::ssd;
  throw ConfigError("unknown method '" + name + "' (expected map, bd or ssd)");
}

void ObjectiveConfig::validate() const {
  if (minibatch_size < 1 || dataset_size < minibatch_size)
    throw ConfigError("objective: need N >= M >= 1, got N=" + std::to_string(dataset_size) +
                      " M=" + std::to_string(minibatch_size));
  if (method == Method::ssd) prior.validate();
}

namespace {

template <typename T>
BasicTensor<T> scaled_likelihood(const std::vector<BasicTensor<T>>& logits,
                                 const std::vector<std::span<const std::int32_t>>& labels, const ObjectiveConfig& cfg) {
  if (logits.size() != labels.size() || logits.empty())
    throw ShapeError("objective: " + std::to_string(logits.size()) + " logit tensors for " +
                     std::to_string(labels.size()) + " label sets");
  std::vector<BasicTensor<T>> ce;
  ce.reserve(logits.size());
  for (std::size_t m = 0; m < logits.size(); ++m) ce.push_back(softmax_cross_entropy(logits[m], labels[m]));
  return affine(add_all(ce), cfg.likelihood_scale());
}

}  // namespace

template <typename T>
BasicTensor<T> gaussian_prior_penalty(const std::vector<BasicTensor<T>>& weights) {
  if (weights.empty()) return BasicTensor<T>::scalar(T(0));
  std::vector<BasicTensor<T>> terms;
  for (const auto& w : weights) terms.push_back(sum(square(w)));
  return affine(add_all(terms), 0.5);
}

template <typename T>
BasicTensor<T> map_loss(const std::vector<BasicTensor<T>>& logits,
                        const std::vector<std::span<const std::int32_t>>& labels,
                        const std::vector<BasicTensor<T>>& weights, const ObjectiveConfig& cfg) {
  cfg.validate();
  if (cfg.method == Method::ssd) throw ConfigError("map_loss: SSD models are trained with elbo_loss");
  return add(scaled_likelihood(logits, labels, cfg), gaussian_prior_penalty(weights));
}

template <typename T>
BasicTensor<T> elbo_loss(const std::vector<BasicTensor<T>>& logits,
                         const std::vector<std::span<const std::int32_t>>& labels,
                         const std::vector<BasicTensor<T>>& layer_kls, const ObjectiveConfig& cfg) {
  cfg.validate();
  if (cfg.method != Method::ssd) throw ConfigError("elbo_loss: only SSD models have a variational objective");
  auto loss = scaled_likelihood(logits, labels, cfg);
  if (layer_kls.empty()) return loss;
  return add(loss, add_all(layer_kls));
}

#define BVXL_INSTANTIATE(T)                                                                               \
  template BasicTensor<T> gaussian_prior_penalty(const std::vector<BasicTensor<T>>&);                     \
  template BasicTensor<T> map_loss(const std::vector<BasicTensor<T>>&,                                    \
                                   const std::vector<std::span<const std::int32_t>>&,                     \
                                   const std::vector<BasicTensor<T>>&, const ObjectiveConfig&);           \
  template BasicTensor<T> elbo_loss(const std::vector<BasicTensor<T>>&,                                   \
                                    const std::vector<std::span<const std::int32_t>>&,                    \
                                    const std::vector<BasicTensor<T>>&, const ObjectiveConfig&);

BVXL_INSTANTIATE(float)
BVXL_INSTANTIATE(double)
#undef BVXL_INSTANTIATE

}  // namespace bvxl
