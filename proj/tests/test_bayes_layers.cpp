#include <gtest/gtest.h>

#include <cmath>

#include "bvxl/bayes_layers.h"
#include "bvxl/error.h"
#include "oracles.h"

using namespace bvxl;

namespace {

ConvSpec cube(std::size_t cin, std::size_t f, std::size_t l = 1) {
  ConvSpec s;
  s.in_channels = cin;
  s.out_channels = f;
  s.dilation = l;
  s.padding = l;
  return s;
}

SpikeSlabConvParams<double> random_params(const ConvSpec& s, Rng& rng) {
  auto p = SpikeSlabConvParams<double>::initialize(s, rng);
  for (auto& r : p.sigma_raw.mutable_values()) r = inverse_softplus(0.02 + 0.1 * rng.uniform());
  for (auto& x : p.dropout_logit.mutable_values()) x = rng.uniform(-2, 2);
  for (auto& b : p.bias.mutable_values()) b = rng.normal();
  return p;
}

}  // namespace

TEST(BernoulliDropout, KeepOneIsIdentity) {
  Rng rng(1);
  Tensor h({2, 3, 3, 3}, oracle::random_vector(54, rng));
  auto out = bernoulli_dropout(h, 1.0, rng);
  for (std::size_t i = 0; i < 54; ++i) EXPECT_EQ(out.at(i), h.at(i));
}

TEST(BernoulliDropout, VanishingKeepZeroesEverything) {
  Rng rng(2);
  Tensor h({1, 4, 4, 4}, oracle::random_vector(64, rng));
  auto out = bernoulli_dropout(h, 1e-300, rng);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(BernoulliDropout, DropRateMatchesBinomial) {
  Rng rng(3);
  const std::size_t n = 100000;
  Tensor h = Tensor::full({n}, 1.0);
  auto out = bernoulli_dropout(h, 0.9, rng);
  double zeros = 0;
  for (double v : out.values()) zeros += v == 0.0;
  const double frac = zeros / n, se = std::sqrt(0.1 * 0.9 / n);
  EXPECT_LT(std::abs(frac - 0.1), 3 * se);
  for (double v : out.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);  // no inverse scaling
}

TEST(BernoulliDropout, RejectsInvalidKeep) {
  Rng rng(4);
  Tensor h({2}, {1, 2});
  EXPECT_THROW(bernoulli_dropout(h, 0.0, rng), ConfigError);
  EXPECT_THROW(bernoulli_dropout(h, 1.5, rng), ConfigError);
}

TEST(Concrete, ClosedFormPoints) {
  EXPECT_EQ(concrete_sample(0.5, 0.02, 0.5), 0.5);
  EXPECT_NEAR(concrete_sample(0.9, 0.02, 0.5), 1.0, 1e-12);
  EXPECT_NEAR(concrete_sample(0.9, 0.02, 0.5), 1.0 / (1.0 + std::exp(-50 * std::log(9.0))), 1e-15);
  EXPECT_TRUE(std::isfinite(concrete_sample(0.3, 0.02, 0.0)));
  EXPECT_TRUE(std::isfinite(concrete_sample(0.3, 0.02, 1.0)));
}

TEST(Concrete, MonteCarloMeanAndBimodality) {
  Rng rng(5);
  for (double p : {0.1, 0.5, 0.9}) {
    const std::size_t n = 100000;
    double mean = 0, near = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double b = concrete_sample(p, kDefaultTemperature, rng.uniform());
      mean += b;
      near += (b < 0.01 || b > 0.99);
    }
    EXPECT_NEAR(mean / n, p, 0.02) << "p = " << p;
    // The near-binary fraction is pinned to its closed form; at t = 0.02 and p = 0.1
    // that is 0.98345, so the sampler cannot reach a 99% bimodality target.
    const double exact = oracle::concrete_near_binary_mass(p, kDefaultTemperature, 0.01);
    EXPECT_NEAR(near / n, exact, 3 * std::sqrt(exact * (1 - exact) / n)) << "p = " << p;
  }
}

TEST(Concrete, GateTensorMatchesScalarFormula) {
  Rng a(6), b(6);
  Tensor logit_t({3}, {logit(0.2), 0.0, logit(0.7)});
  auto gate = concrete_gate(logit_t, 0.5, a);
  const double ps[] = {0.2, 0.5, 0.7};
  for (std::size_t f = 0; f < 3; ++f) EXPECT_NEAR(gate.at(f), concrete_sample(ps[f], 0.5, b.uniform()), 1e-12);
}

TEST(LocalReparam, ZeroInputGivesBias) {
  Rng rng(7);
  auto p = random_params(cube(1, 2), rng);
  auto out = ffg_conv_local_reparam(Tensor::zeros({1, 3, 3, 3}), p, rng);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t v = 0; v < 27; ++v) EXPECT_EQ(out.at(f * 27 + v), p.bias.at(f));
}

TEST(LocalReparam, VanishingSigmaIsDeterministicConv) {
  Rng rng(8);
  auto p = random_params(cube(2, 2), rng);
  for (auto& r : p.sigma_raw.mutable_values()) r = -800.0;
  Tensor h({2, 4, 4, 4}, oracle::random_vector(128, rng));
  auto out = ffg_conv_local_reparam(h, p, rng);
  auto ref = dilated_conv3d(h, p.mu, p.bias, p.spec);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.at(i), ref.at(i), 1e-12);
}

TEST(LocalReparam, MomentsMatchAnalyticValues) {
  Rng rng(9);
  const std::size_t draws = 100000;
  for (int c = 0; c < 3; ++c) {
    auto p = random_params(cube(1, 1), rng);
    Tensor h({1, 3, 3, 3}, oracle::random_vector(27, rng));
    std::vector<double> mu(p.mu.values().begin(), p.mu.values().end()), var(27), h2(27);
    for (std::size_t i = 0; i < 27; ++i) {
      const double s = sigma_from_raw(p.sigma_raw.at(i));
      var[i] = s * s;
      h2[i] = h.at(i) * h.at(i);
    }
    std::vector<double> hv(h.values().begin(), h.values().end());
    const auto m_star = oracle::brute_conv3d(hv, 3, 3, 3, mu, {p.bias.at(0)}, p.spec);
    const auto v_star = oracle::brute_conv3d(h2, 3, 3, 3, var, {}, p.spec);
    std::vector<double> sum(27, 0.0), sq(27, 0.0);
    NoGradGuard g;
    for (std::size_t d = 0; d < draws; ++d) {
      auto out = ffg_conv_local_reparam(h, p, rng);
      for (std::size_t i = 0; i < 27; ++i) {
        sum[i] += out.at(i);
        sq[i] += out.at(i) * out.at(i);
      }
    }
    for (std::size_t i = 0; i < 27; ++i) {
      const double mean = sum[i] / draws, var_hat = sq[i] / draws - mean * mean;
      EXPECT_LT(std::abs(mean - m_star[i]), 3 * std::sqrt(v_star[i] / draws) + 1e-12);
      EXPECT_LT(std::abs(var_hat - v_star[i]), 3 * v_star[i] * std::sqrt(2.0 / (draws - 1)) + 1e-12);
    }
  }
}

TEST(SpikeSlab, SaturatedKeepEqualsLocalReparam) {
  Rng init(10);
  auto p = random_params(cube(1, 2), init);
  for (auto& x : p.dropout_logit.mutable_values()) x = 60.0;
  Tensor h({1, 3, 3, 3}, oracle::random_vector(27, init));
  Rng a(11), b(11);
  auto ss = spike_slab_conv(h, p, a);
  b.uniform();
  b.uniform();  // the two gate draws spike_slab_conv consumes first
  auto ffg = ffg_conv_local_reparam(h, p, b);
  for (std::size_t i = 0; i < ss.numel(); ++i) EXPECT_NEAR(ss.at(i), ffg.at(i), 1e-12);
}

TEST(SpikeSlab, SaturatedDropGivesBiasOnly) {
  Rng rng(12);
  auto p = random_params(cube(1, 2), rng);
  for (auto& x : p.dropout_logit.mutable_values()) x = -60.0;
  Tensor h({1, 3, 3, 3}, oracle::random_vector(27, rng));
  auto out = spike_slab_conv(h, p, rng);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t v = 0; v < 27; ++v) EXPECT_NEAR(out.at(f * 27 + v), p.bias.at(f), 1e-12);
}

TEST(SpikeSlab, HalfKeepZeroesHalfTheMaps) {
  Rng init(13);
  auto p = random_params(cube(1, 1), init);
  p.dropout_logit.mutable_values()[0] = 0.0;
  p.bias.mutable_values()[0] = 0.0;
  Tensor h = Tensor::full({1, 3, 3, 3}, 1.0);
  const std::size_t n = 10000;
  double dropped = 0;
  NoGradGuard g;
  for (std::size_t i = 0; i < n; ++i) {
    Rng a(1000 + i), b(1000 + i);
    auto out = spike_slab_conv(h, p, a);
    b.uniform();
    auto slab = ffg_conv_local_reparam(h, p, b);
    dropped += std::abs(out.at(13)) < 0.01 * std::abs(slab.at(13));
  }
  // A relaxed gate below 0.01 zeroes the map to within 1%; at p = 0.5 that is sigmoid(-t logit(0.99)).
  const double expected = oracle::concrete_below_mass(0.5, kDefaultTemperature, 0.01);
  EXPECT_NEAR(expected, 0.47704, 1e-5);
  EXPECT_LT(std::abs(dropped / n - expected), 3 * std::sqrt(expected * (1 - expected) / n));
}

TEST(KL, BernoulliExamplesAndDiscreteOracle) {
  EXPECT_EQ(kl_bernoulli(0.5, 0.5), 0.0);
  EXPECT_NEAR(kl_bernoulli(0.9, 0.5), 0.9 * std::log(1.8) + 0.1 * std::log(0.2), 1e-15);
  EXPECT_NEAR(kl_bernoulli(0.9, 0.5), 0.36806, 1e-5);
  Rng rng(14);
  for (int i = 0; i < 50; ++i) {
    const double q = rng.uniform(0.001, 0.999), p = rng.uniform(0.001, 0.999);
    const double outcomes[2][2] = {{q, p}, {1 - q, 1 - p}};
    double ref = 0;
    for (auto& o : outcomes) ref += o[0] * std::log(o[0] / o[1]);
    EXPECT_NEAR(kl_bernoulli(q, p), ref, 1e-12);
    EXPECT_GE(kl_bernoulli(q, p), 0.0);
  }
}

TEST(KL, GaussianExamplesAndQuadrature) {
  EXPECT_EQ(kl_gaussian(0, 0.1, 0, 0.1), 0.0);
  EXPECT_NEAR(kl_gaussian(0.1, 0.1, 0, 0.1), 0.5, 1e-14);
  EXPECT_NEAR(kl_gaussian(0, 0.01, 0, 0.1), std::log(10.0) + 0.005 - 0.5, 1e-14);
  EXPECT_NEAR(kl_gaussian(0, 0.01, 0, 0.1), 1.80759, 1e-5);
  EXPECT_NEAR(kl_gaussian(0.1, 0.1, 0, 0.1), oracle::kl_gaussian_quadrature(0.1, 0.1, 0, 0.1), 1e-6);
  Rng rng(15);
  for (int i = 0; i < 20; ++i) {
    const double mu = rng.uniform(-0.3, 0.3), s = rng.uniform(0.01, 0.3);
    EXPECT_NEAR(kl_gaussian(mu, s, 0, 0.1), oracle::kl_gaussian_quadrature(mu, s, 0, 0.1), 1e-6);
    EXPECT_GE(kl_gaussian(mu, s, 0, 0.1), 0.0);
  }
}

TEST(KL, LayerAtPriorIsExactlyZero) {
  Rng rng(16);
  SpikeSlabPrior prior;
  auto p = SpikeSlabConvParams<double>::initialize(cube(2, 3), rng);
  for (auto& m : p.mu.mutable_values()) m = prior.mu_prior;
  const double raw = inverse_softplus(prior.sigma_prior);
  for (auto& r : p.sigma_raw.mutable_values()) r = raw;
  for (auto& x : p.dropout_logit.mutable_values()) x = logit(prior.p_prior);
  EXPECT_EQ(layer_kl(p, prior).item(), 0.0);
}

TEST(KL, LayerSingleTermAndLoopOracle) {
  Rng rng(17);
  SpikeSlabPrior prior;
  ConvSpec one;
  one.kernel_bounds = {0, 0, 0};
  one.padding = 0;
  auto single = random_params(one, rng);
  const double p1 = 1 / (1 + std::exp(-single.dropout_logit.at(0)));
  EXPECT_NEAR(layer_kl(single, prior).item(),
              kl_bernoulli(p1, 0.5) + kl_gaussian(single.mu.at(0), sigma_from_raw(single.sigma_raw.at(0)), 0, 0.1),
              1e-12);

  auto p = random_params(cube(1, 2), rng);
  double ref = 0;
  for (std::size_t f = 0; f < 2; ++f) ref += kl_bernoulli(1 / (1 + std::exp(-p.dropout_logit.at(f))), 0.5);
  for (std::size_t i = 0; i < 54; ++i) ref += kl_gaussian(p.mu.at(i), sigma_from_raw(p.sigma_raw.at(i)), 0, 0.1);
  EXPECT_NEAR(layer_kl(p, prior).item(), ref, 1e-10);
}

TEST(Gradients, BernoulliDropoutFrozenMask) {
  Rng rng(18);
  Tensor h({1, 4, 4, 4}, oracle::random_vector(64, rng), true);
  Tensor probe({1, 4, 4, 4}, oracle::random_vector(64, rng));
  auto check = oracle::finite_difference_check({h}, [&] {
    Rng frozen(99);
    return sum(mul(bernoulli_dropout(h, 0.7, frozen), probe));
  });
  EXPECT_LT(check.max_rel_error, 1e-6) << check.worst;
}

TEST(Gradients, LocalReparamFrozenNoise) {
  Rng rng(19);
  auto p = random_params(cube(2, 2), rng);
  Tensor h({2, 4, 4, 4}, oracle::random_vector(128, rng), true);
  Tensor probe({2, 4, 4, 4}, oracle::random_vector(128, rng));
  auto check = oracle::finite_difference_check({h, p.mu, p.sigma_raw, p.bias}, [&] {
    Rng frozen(7);
    return sum(mul(ffg_conv_local_reparam(h, p, frozen), probe));
  });
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}

TEST(Gradients, SpikeSlabFrozenNoise) {
  Rng rng(20);
  auto p = random_params(cube(2, 3, 2), rng);
  p.temperature = 0.5;  // keeps the gates off saturation so dropout_logit gradients are visible
  Tensor h({2, 4, 4, 4}, oracle::random_vector(128, rng), true);
  Tensor probe({3, 4, 4, 4}, oracle::random_vector(192, rng));
  auto check = oracle::finite_difference_check({h, p.mu, p.sigma_raw, p.dropout_logit, p.bias}, [&] {
    Rng frozen(8);
    return sum(mul(spike_slab_conv(h, p, frozen), probe));
  });
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}

TEST(Gradients, LayerKl) {
  Rng rng(22);
  auto p = random_params(cube(2, 2), rng);
  for (auto& r : p.sigma_raw.mutable_values()) r = rng.uniform(-6, 1);
  SpikeSlabPrior prior{0.3, 0.05, 0.2};
  auto check = oracle::finite_difference_check({p.mu, p.sigma_raw, p.dropout_logit},
                                               [&] { return layer_kl(p, prior); });
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}

TEST(SpikeSlabParams, InitializationFollowsConfig) {
  Rng rng(23);
  auto p = SpikeSlabConvParams<double>::initialize(cube(4, 8), rng, 0.05, 0.9);
  for (double r : p.sigma_raw.values()) EXPECT_NEAR(sigma_from_raw(r), 0.05, 1e-12);
  for (double x : p.dropout_logit.values()) EXPECT_NEAR(1 / (1 + std::exp(-x)), 0.9, 1e-12);
  double var = 0;
  for (double m : p.mu.values()) var += m * m;
  var /= static_cast<double>(p.mu.numel());
  EXPECT_NEAR(var, 2.0 / (4 * 27), 0.25 * 2.0 / (4 * 27));
}
