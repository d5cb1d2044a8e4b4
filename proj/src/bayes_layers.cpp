#include "bvxl/bayes_layers.h"

#include <algorithm>
#include <cmath>

namespace bvxl {

namespace {

double softplus_d(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_d(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(softplus(x)) without underflow for very negative x.
double log_softplus(double x) { return x < -700.0 ? x : std::log(softplus_d(x)); }

}  // namespace

void SpikeSlabPrior::validate() const {
  if (!(p_prior > 0 && p_prior < 1)) throw ConfigError("spike-and-slab prior: p_prior must lie in (0, 1)");
  if (!(sigma_prior > 0)) throw ConfigError("spike-and-slab prior: sigma_prior must be positive");
}

double inverse_softplus(double sigma) {
  if (!(sigma > 0)) throw ConfigError("inverse_softplus: sigma must be positive");
  return sigma > 30 ? sigma : std::log(std::expm1(sigma));
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double sigma_from_raw(double raw) { return softplus_d(raw); }

template <typename T>
SpikeSlabConvParams<T> SpikeSlabConvParams<T>::initialize(const ConvSpec& spec, Rng& rng, double sigma_init,
                                                          double keep_init, double temperature) {
  if (!(temperature > 0)) throw ConfigError("concrete temperature must be positive");
  if (!(keep_init > 0 && keep_init < 1)) throw ConfigError("initial keep probability must lie in (0, 1)");
  SpikeSlabConvParams p;
  p.spec = spec;
  p.temperature = temperature;
  const Shape ws = spec.weight_shape();
  const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_channels * spec.taps()));
  std::vector<T> mu(shape_numel(ws));
  for (auto& m : mu) m = static_cast<T>(stddev * rng.normal());
  p.mu = BasicTensor<T>(ws, std::move(mu), true);
  p.sigma_raw = BasicTensor<T>::full(ws, static_cast<T>(inverse_softplus(sigma_init)), true);
  p.dropout_logit = BasicTensor<T>::full({spec.out_channels}, static_cast<T>(logit(keep_init)), true);
  p.bias = BasicTensor<T>::zeros({spec.out_channels}, true);
  return p;
}

template <typename T>
BasicTensor<T> bernoulli_dropout(const BasicTensor<T>& h, double keep_prob, Rng& rng) {
  if (!(keep_prob > 0 && keep_prob <= 1))
    throw ConfigError("bernoulli_dropout: keep probability must lie in (0, 1], got " + std::to_string(keep_prob));
  if (keep_prob == 1.0) return h;
  std::vector<T> mask(h.numel());
  for (auto& m : mask) m = rng.bernoulli(keep_prob) ? T(1) : T(0);
  return mul(h, BasicTensor<T>(h.shape(), std::move(mask)));
}

double concrete_sample(double p_f, double temperature, double u) {
  u = std::clamp(u, kConcreteClamp, 1.0 - kConcreteClamp);
  const double z = (std::log(p_f) - std::log1p(-p_f) + std::log(u) - std::log1p(-u)) / temperature;
  return sigmoid_d(z);
}

template <typename T>
BasicTensor<T> concrete_gate(const BasicTensor<T>& dropout_logit, double temperature, Rng& rng) {
  std::vector<T> noise(dropout_logit.numel());
  for (auto& n : noise) {
    const double u = std::clamp(rng.uniform(), kConcreteClamp, 1.0 - kConcreteClamp);
    n = static_cast<T>(std::log(u) - std::log1p(-u));
  }
  // log p - log(1 - p) is the logit itself.
  auto z = add(dropout_logit, BasicTensor<T>(dropout_logit.shape(), std::move(noise)));
  return sigmoid(affine(z, 1.0 / temperature));
}

template <typename T>
BasicTensor<T> gaussian_sample(const BasicTensor<T>& mean, const BasicTensor<T>& variance, std::vector<T> noise) {
  if (mean.shape() != variance.shape() || noise.size() != mean.numel())
    throw ShapeError("gaussian_sample: mean " + shape_string(mean.shape()) + " vs variance " +
                     shape_string(variance.shape()));
  auto mv = mean.values();
  auto vv = variance.values();
  std::vector<T> out(mv.size());
  std::vector<T> stddev(mv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    stddev[i] = std::sqrt(std::max(vv[i], T(0)));
    out[i] = mv[i] + stddev[i] * noise[i];
  }
  return BasicTensor<T>::make_result(
      mean.shape(), std::move(out), {mean, variance},
      [noise = std::move(noise), stddev = std::move(stddev)](TensorNode<T>& self) {
        TensorNode<T>& pm = *self.parents[0];
        TensorNode<T>& pv = *self.parents[1];
        if (pm.requires_grad) {
          auto& g = pm.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pv.requires_grad) {
          auto& g = pv.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            if (stddev[i] > T(0)) g[i] += self.grad[i] * noise[i] / (T(2) * stddev[i]);
        }
      });
}

namespace {

// Local-reparameterized sample of (g_f *_l h) without bias.
template <typename T>
BasicTensor<T> ffg_core(const BasicTensor<T>& h, const SpikeSlabConvParams<T>& p, Rng& rng) {
  if (h.shape().size() != 4) throw ShapeError("ffg_conv: input " + shape_string(h.shape()) + " is not [C, D, H, W]");
  const Extent3 out = p.spec.output_extent({h.shape()[1], h.shape()[2], h.shape()[3]});
  std::vector<T> noise(p.spec.out_channels * out[0] * out[1] * out[2]);
  for (auto& n : noise) n = static_cast<T>(rng.normal());
  return conv3d_gaussian_sample(h, p.mu, square(softplus(p.sigma_raw)), p.spec, std::move(noise));
}

}  // namespace

template <typename T>
BasicTensor<T> ffg_conv_local_reparam(const BasicTensor<T>& h, const SpikeSlabConvParams<T>& params, Rng& rng) {
  return add_channel_bias(ffg_core(h, params, rng), params.bias);
}

template <typename T>
BasicTensor<T> spike_slab_conv(const BasicTensor<T>& h, const SpikeSlabConvParams<T>& params, Rng& rng) {
  // Gate first so the draw order is (b, eps) for every layer.
  auto gate = concrete_gate(params.dropout_logit, params.temperature, rng);
  auto slab = ffg_core(h, params, rng);
  return add_channel_bias(scale_channels(slab, gate), params.bias);
}

double kl_bernoulli(double p_f, double p_prior) {
  double kl = 0;
  if (p_f > 0) kl += p_f * std::log(p_f / p_prior);
  if (p_f < 1) kl += (1 - p_f) * std::log((1 - p_f) / (1 - p_prior));
  return kl;
}

double kl_gaussian(double mu, double sigma, double mu_prior, double sigma_prior) {
  const double d = mu - mu_prior;
  return std::log(sigma_prior / sigma) + (sigma * sigma + d * d) / (2 * sigma_prior * sigma_prior) - 0.5;
}

template <typename T>
BasicTensor<T> layer_kl(const SpikeSlabConvParams<T>& params, const SpikeSlabPrior& prior) {
  prior.validate();
  auto mu = params.mu.values();
  auto raw = params.sigma_raw.values();
  auto lg = params.dropout_logit.values();
  if (mu.size() != raw.size()) throw ShapeError("layer_kl: mu and sigma_raw differ in shape");

  // Prior terms go through the same softplus path as the variational ones, so that
  // parameters set to the prior (sigma_raw = inverse_softplus(sigma_p)) cancel exactly.
  const double raw_p = inverse_softplus(prior.sigma_prior);
  const double sigma_p = softplus_d(raw_p);
  const double var_p = sigma_p * sigma_p;
  const double log_sp = log_softplus(raw_p);
  const double logit_prior = logit(prior.p_prior);
  const double log_pp = -softplus_d(-logit_prior), log_1mpp = -softplus_d(logit_prior);

  double total = 0;
  for (std::size_t f = 0; f < lg.size(); ++f) {
    const double x = lg[f];
    const double p = sigmoid_d(x);
    const double log_p = -softplus_d(-x), log_1mp = -softplus_d(x);
    total += p * (log_p - log_pp) + (1 - p) * (log_1mp - log_1mpp);
  }
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double sigma = softplus_d(raw[i]);
    const double d = mu[i] - prior.mu_prior;
    total += log_sp - log_softplus(raw[i]) + (sigma * sigma + d * d) / (2 * var_p) - 0.5;
  }

  const SpikeSlabPrior pr = prior;
  return BasicTensor<T>::make_result(
      Shape{1}, std::vector<T>{static_cast<T>(total)}, {params.mu, params.sigma_raw, params.dropout_logit},
      [pr, var_p, logit_prior](TensorNode<T>& self) {
        const double s = self.grad[0];
        TensorNode<T>& pmu = *self.parents[0];
        TensorNode<T>& praw = *self.parents[1];
        TensorNode<T>& plg = *self.parents[2];
        if (pmu.requires_grad) {
          auto& g = pmu.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += static_cast<T>(s * (pmu.values[i] - pr.mu_prior) / var_p);
        }
        if (praw.requires_grad) {
          auto& g = praw.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double r = praw.values[i];
            const double sigma = softplus_d(r);
            const double ds = sigmoid_d(r);
            // -ds / sigma is ~ -1 for very negative r; evaluate the ratio directly there.
            const double inv_term = r < -30 ? 1.0 : ds / sigma;
            g[i] += static_cast<T>(s * (-inv_term + sigma * ds / var_p));
          }
        }
        if (plg.requires_grad) {
          auto& g = plg.grad_buffer();
          for (std::size_t f = 0; f < g.size(); ++f) {
            const double x = plg.values[f];
            const double p = sigmoid_d(x);
            g[f] += static_cast<T>(s * (x - logit_prior) * p * (1 - p));
          }
        }
      });
}

#define BVXL_INSTANTIATE(T)                                                                             \
  template struct SpikeSlabConvParams<T>;                                                               \
  template BasicTensor<T> bernoulli_dropout(const BasicTensor<T>&, double, Rng&);                      \
  template BasicTensor<T> concrete_gate(const BasicTensor<T>&, double, Rng&);                          \
  template BasicTensor<T> gaussian_sample(const BasicTensor<T>&, const BasicTensor<T>&, std::vector<T>); \
  template BasicTensor<T> ffg_conv_local_reparam(const BasicTensor<T>&, const SpikeSlabConvParams<T>&, Rng&); \
  template BasicTensor<T> spike_slab_conv(const BasicTensor<T>&, const SpikeSlabConvParams<T>&, Rng&);  \
  template BasicTensor<T> layer_kl(const SpikeSlabConvParams<T>&, const SpikeSlabPrior&);

BVXL_INSTANTIATE(float)
BVXL_INSTANTIATE(double)
#undef BVXL_INSTANTIATE

}  // namespace bvxl
