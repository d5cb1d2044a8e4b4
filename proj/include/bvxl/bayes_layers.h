#pragma once

#include <span>
#include <vector>

#include "bvxl/conv3d.h"
#include "bvxl/rng.h"
#include "bvxl/tensor.h"

namespace bvxl {

/// Spike-and-slab prior shared by every filter: Bern(p_prior) x N(mu_prior, sigma_prior^2).
struct SpikeSlabPrior {
  double p_prior = 0.5;
  double mu_prior = 0.0;
  double sigma_prior = 0.1;

  void validate() const;
};

/// Fixed keep probability for MC Bernoulli dropout; P(mask = 1) = keep_prob.
struct BernoulliDropoutConfig {
  double keep_prob = 0.9;
};

/// Uniform draws fed to the concrete relaxation are clamped to this margin.
inline constexpr double kConcreteClamp = 1e-7;
/// Temperature of the concrete relaxation.
inline constexpr double kDefaultTemperature = 0.02;

/// Variational parameters of one spike-and-slab convolution layer.
///
/// Each filter f owns a keep probability p_f = sigmoid(dropout_logit[f]) and each
/// weight a Gaussian N(mu, softplus(sigma_raw)^2). The bias is a point estimate.
template <typename T>
struct SpikeSlabConvParams {
  ConvSpec spec;
  BasicTensor<T> mu;             // weight shape
  BasicTensor<T> sigma_raw;      // weight shape
  BasicTensor<T> dropout_logit;  // [F]
  BasicTensor<T> bias;           // [F]
  double temperature = kDefaultTemperature;

  /// mu ~ N(0, 2 / fan_in), sigma = sigma_init, p_f = keep_init, bias = 0.
  static SpikeSlabConvParams initialize(const ConvSpec& spec, Rng& rng, double sigma_init = 0.05,
                                        double keep_init = 0.9, double temperature = kDefaultTemperature);

  std::vector<BasicTensor<T>> tensors() const { return {mu, sigma_raw, dropout_logit, bias}; }
};

/// Multiplies every element of h by an independent Bern(keep_prob) draw. No rescaling.
template <typename T>
BasicTensor<T> bernoulli_dropout(const BasicTensor<T>& h, double keep_prob, Rng& rng);

/// Relaxed Bernoulli draw sigmoid((logit(p_f) + logit(u)) / t), with u clamped.
double concrete_sample(double p_f, double temperature, double u);

/// One differentiable concrete draw per filter from p_f = sigmoid(dropout_logit).
template <typename T>
BasicTensor<T> concrete_gate(const BasicTensor<T>& dropout_logit, double temperature, Rng& rng);

/// mean + sqrt(variance) * noise. The variance gradient is taken as zero where the
/// variance is exactly zero.
template <typename T>
BasicTensor<T> gaussian_sample(const BasicTensor<T>& mean, const BasicTensor<T>& variance, std::vector<T> noise);

/// Local reparameterization of a fully factorized Gaussian convolution:
/// mean = conv(h, mu), variance = conv(h^2, sigma^2), one N(0,1) draw per output
/// element. Bias is added to the sample.
template <typename T>
BasicTensor<T> ffg_conv_local_reparam(const BasicTensor<T>& h, const SpikeSlabConvParams<T>& params, Rng& rng);

/// b_f * (g_f *_l h) + bias_f with one concrete draw b_f per filter.
template <typename T>
BasicTensor<T> spike_slab_conv(const BasicTensor<T>& h, const SpikeSlabConvParams<T>& params, Rng& rng);

/// KL between Bernoulli(p_f) and Bernoulli(p_prior).
double kl_bernoulli(double p_f, double p_prior);

/// KL between N(mu, sigma^2) and N(mu_prior, sigma_prior^2).
double kl_gaussian(double mu, double sigma, double mu_prior, double sigma_prior);

/// Sum over filters of the Bernoulli KL plus the Gaussian KL of every weight.
/// Differentiable in mu, sigma_raw and dropout_logit; the bias does not enter.
template <typename T>
BasicTensor<T> layer_kl(const SpikeSlabConvParams<T>& params, const SpikeSlabPrior& prior);

/// softplus^{-1}(sigma).
double inverse_softplus(double sigma);
/// softplus(raw): the weight standard deviation encoded by sigma_raw.
double sigma_from_raw(double raw);

/// log(p / (1 - p)).
double logit(double p);

}  // namespace bvxl
