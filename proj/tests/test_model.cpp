#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bvxl/error.h"
#include "bvxl/model.h"
#include "oracles.h"

using namespace bvxl;

namespace {

MeshNetConfig tiny(Method m, std::size_t side = 4, std::size_t filters = 2, std::size_t classes = 3) {
  MeshNetConfig c;
  c.method = m;
  c.filters = filters;
  c.num_classes = classes;
  c.subvolume_size = side;
  return c;
}

Tensor random_input(const MeshNetConfig& c, Rng& rng) {
  const std::size_t s = c.subvolume_size;
  return Tensor({c.in_channels, s, s, s}, oracle::random_vector(c.in_channels * s * s * s, rng));
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "bvxl_model_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(MeshNetConfig, DefaultsDescribeEightLayers) {
  MeshNetConfig c;
  EXPECT_EQ(c.num_layers(), 8u);
  const auto specs = c.layer_specs();
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(specs[i].taps(), 27u);
    EXPECT_EQ(specs[i].padding, specs[i].dilation);
  }
  EXPECT_EQ(specs[7].taps(), 1u);
  EXPECT_EQ(specs[7].padding, 0u);
  EXPECT_EQ(receptive_field(specs), (Extent3{37, 37, 37}));
}

TEST(MeshNetConfig, SpikeSlabInitialization) {
  MeshNetConfig full;
  EXPECT_EQ(full.sigma_init, 0.05);
  EXPECT_EQ(full.keep_init, 0.9);
  auto desk = MeshNetConfig::desk_scale(Method::ssd);
  EXPECT_EQ(desk.sigma_init, 0.005);
  EXPECT_EQ(desk.keep_init, 0.99);
  EXPECT_EQ(desk.filters, 16u);
  EXPECT_EQ(desk.subvolume_size, 16u);
}

TEST(MeshNetConfig, InconsistentListsRejected) {
  MeshNetConfig c;
  c.paddings.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  MeshNetConfig d;
  d.dilations.push_back(2);
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(MeshNetConfig, KeyValueRoundTrip) {
  auto c = MeshNetConfig::desk_scale(Method::ssd, 12);
  c.bd_keep_prob = 0.75;
  c.temperature = 0.1;
  const auto back = MeshNetConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.to_key_values(), c.to_key_values());
}

TEST(MeshNet, DefaultCensus) {
  Rng rng(1);
  MeshNetConfig c;
  auto net = MeshNet<float>::build(c, rng);
  const auto census = net.census();
  EXPECT_EQ(census.deterministic_total(), 1501106u);
  EXPECT_EQ(census.deterministic_total(),
            (1u * 96 * 27 + 96) + 6u * (96 * 96 * 27 + 96) + (96u * 50 + 50));
}

TEST(MeshNet, SpikeSlabCensus) {
  Rng rng(2);
  MeshNetConfig c;
  c.method = Method::ssd;
  auto net = MeshNet<float>::build(c, rng);
  const auto census = net.census();
  const std::size_t gaussian = 1u * 96 * 27 + 6u * 96 * 96 * 27 + 96u * 50;
  EXPECT_EQ(census.weights, gaussian);
  EXPECT_EQ(census.sigma_raw, gaussian);
  EXPECT_EQ(census.dropout_logits, 96u * 7 + 50);
  EXPECT_EQ(census.biases, 96u * 7 + 50);
  EXPECT_EQ(census.total(), 2 * gaussian + (96u * 7 + 50) + (96u * 7 + 50));
}

TEST(MeshNet, OutputShapeForSubvolumeSizes) {
  for (std::size_t s : {16, 32}) {
    for (Method m : {Method::map, Method::ssd}) {
      Rng rng(3);
      auto c = tiny(m, s, 3, 5);
      auto net = MeshNet<float>::build(c, rng);
      TensorF in({1, s, s, s}, std::vector<float>(s * s * s, 0.5f));
      EXPECT_EQ(net.forward(in, rng, ForwardMode::sample).shape(), (Shape{5, s, s, s}));
    }
  }
}

TEST(MeshNet, WrongInputShapeRejected) {
  Rng rng(4);
  auto net = MeshNet<double>::build(tiny(Method::map), rng);
  EXPECT_THROW(net.forward(Tensor::zeros({1, 5, 4, 4}), rng, ForwardMode::sample), ShapeError);
}

TEST(MeshNet, MapForwardIsDeterministic) {
  Rng rng(5);
  auto c = tiny(Method::map);
  auto net = MeshNet<double>::build(c, rng);
  auto x = random_input(c, rng);
  auto a = net.forward(x, rng, ForwardMode::sample), b = net.forward(x, rng, ForwardMode::sample);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(MeshNet, SeededSsdForwardReplays) {
  Rng rng(6);
  auto c = tiny(Method::ssd);
  auto net = MeshNet<double>::build(c, rng);
  auto x = random_input(c, rng);
  Rng r1(42), r2(42), r3(43);
  auto a = net.forward(x, r1, ForwardMode::sample), b = net.forward(x, r2, ForwardMode::sample);
  auto d = net.forward(x, r3, ForwardMode::sample);
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(a.at(i), b.at(i));
    differs |= a.at(i) != d.at(i);
  }
  EXPECT_TRUE(differs);
}

TEST(MeshNet, BdDropsOnlyWhenSampling) {
  Rng rng(7);
  auto c = tiny(Method::bd, 4, 8);  // two filters can leave every channel dead
  c.bd_keep_prob = 0.5;
  auto net = MeshNet<double>::build(c, rng);
  auto x = random_input(c, rng);
  auto det = net.forward(x, rng, ForwardMode::deterministic);
  auto s1 = net.forward(x, rng, ForwardMode::sample);
  bool differs = false;
  for (std::size_t i = 0; i < det.numel(); ++i) differs |= det.at(i) != s1.at(i);
  EXPECT_TRUE(differs);
}

TEST(MeshNet, PredictMcIsAveragedSimplex) {
  Rng rng(8);
  auto c = tiny(Method::ssd);
  auto net = MeshNet<double>::build(c, rng);
  auto x = random_input(c, rng);
  Rng a(9), b(9);
  const auto one = net.predict_mc(x, 1, a);
  const auto ref = softmax_channels(net.forward(x, b, ForwardMode::sample));
  ASSERT_EQ(one.size(), ref.size());
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i], ref[i]);

  const auto probs = net.predict_mc(x, 10, a);
  const std::size_t V = 64;
  for (std::size_t v = 0; v < V; ++v) {
    double s = 0;
    for (std::size_t k = 0; k < c.num_classes; ++k) s += probs[k * V + v];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_THROW(net.predict_mc(x, 0, a), ConfigError);
}

TEST(MeshNet, SaturatedSpikeSlabEqualsMapForward) {
  Rng rng(10);
  auto cs = tiny(Method::ssd);
  auto ssd = MeshNet<double>::build(cs, rng);
  auto cm = cs;
  cm.method = Method::map;
  auto map = MeshNet<double>::build(cm, rng);
  auto sp = ssd.parameters();
  auto mp = map.parameters();
  for (auto& p : sp) {
    if (p.role == ParamRole::sigma_raw)
      for (auto& v : p.tensor.mutable_values()) v = -800.0;
    if (p.role == ParamRole::dropout_logit)
      for (auto& v : p.tensor.mutable_values()) v = 60.0;
  }
  for (auto& p : mp)
    for (auto& q : sp)
      if (p.layer == q.layer && ((p.role == ParamRole::weight && q.role == ParamRole::mu) ||
                                 (p.role == ParamRole::bias && q.role == ParamRole::bias))) {
        auto dst = p.tensor.mutable_values();
        std::copy(q.tensor.values().begin(), q.tensor.values().end(), dst.begin());
      }
  auto x = random_input(cs, rng);
  auto a = map.forward(x, rng, ForwardMode::sample);
  auto b = ssd.forward(x, rng, ForwardMode::sample);
  auto d = ssd.forward(x, rng, ForwardMode::deterministic);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
    EXPECT_EQ(a.at(i), d.at(i));
  }
}

TEST(MeshNet, FullNetworkGradientsMatchFiniteDifferences) {
  for (Method m : {Method::map, Method::bd, Method::ssd}) {
    Rng rng(11);
    auto c = tiny(m);
    c.temperature = 0.5;
    auto net = MeshNet<double>::build(c, rng);
    // Zero-initialized biases put pre-activations fed by dead channels exactly on the ReLU kink.
    for (auto& p : net.parameters())
      if (p.role == ParamRole::bias)
        for (auto& b : p.tensor.mutable_values()) b = 0.3 * rng.normal();
    auto x = random_input(c, rng);
    std::vector<std::int32_t> labels(64);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.index(3));
    ObjectiveConfig obj;
    obj.method = m;
    obj.dataset_size = 3;
    obj.minibatch_size = 1;
    auto check = oracle::finite_difference_check(net.trainable(), [&] {
      Rng frozen(77);
      std::vector<Tensor> logits{net.forward(x, frozen, ForwardMode::sample)};
      std::vector<std::span<const std::int32_t>> ys{labels};
      return m == Method::ssd ? elbo_loss(logits, ys, net.layer_kls(), obj)
                              : map_loss(logits, ys, net.prior_weights(), obj);
    });
    EXPECT_GT(check.checked, 50u);
    EXPECT_LT(check.max_rel_error, 1e-4) << method_name(m) << ": " << check.worst;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (Method m : {Method::map, Method::bd, Method::ssd}) {
    Rng rng(12);
    auto c = tiny(m, 4, 3, 4);
    auto net = MeshNet<float>::build(c, rng);
    const auto path = temp_path("rt_" + method_name(m) + ".ckpt");
    net.save(path, 1234);
    std::uint64_t seed = 0;
    auto back = MeshNet<float>::load(path, &seed);
    EXPECT_EQ(seed, 1234u);
    EXPECT_EQ(back.config().to_key_values(), c.to_key_values());
    TensorF x({1, 4, 4, 4}, std::vector<float>(64, 0.25f));
    Rng r1(5), r2(5);
    auto a = net.forward(x, r1, ForwardMode::sample), b = back.forward(x, r2, ForwardMode::sample);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
  }
}

TEST(Checkpoint, SpikeSlabBlobsForEveryLayer) {
  Rng rng(13);
  auto net = MeshNet<float>::build(tiny(Method::ssd), rng);
  const auto path = temp_path("ssd_blobs.ckpt");
  net.save(path, 1);
  auto back = MeshNet<float>::load(path);
  std::size_t mu = 0, sr = 0, dl = 0;
  for (const auto& p : back.parameters()) {
    mu += p.role == ParamRole::mu;
    sr += p.role == ParamRole::sigma_raw;
    dl += p.role == ParamRole::dropout_logit;
  }
  EXPECT_EQ(mu, 8u);
  EXPECT_EQ(sr, 8u);
  EXPECT_EQ(dl, 8u);
  EXPECT_EQ(checkpoint_scalar_bytes(path), 4u);
  EXPECT_EQ(checkpoint_config(path).method, Method::ssd);
}

TEST(Checkpoint, PrecisionConversion) {
  Rng rng(14);
  auto net = MeshNet<double>::build(tiny(Method::map), rng);
  const auto path = temp_path("f64.ckpt");
  net.save(path, 3);
  auto f = MeshNet<float>::load(path);
  const auto a = net.parameters();
  const auto b = f.parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].tensor.numel(); ++k)
      EXPECT_EQ(static_cast<float>(a[i].tensor.at(k)), b[i].tensor.at(k));
}

TEST(Checkpoint, CorruptFileIsDataError) {
  const auto path = temp_path("garbage.ckpt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  EXPECT_THROW(MeshNet<float>::load(path), DataError);
  EXPECT_THROW(MeshNet<float>::load(temp_path("missing.ckpt")), DataError);
}
