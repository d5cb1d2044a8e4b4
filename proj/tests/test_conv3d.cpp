#include <cmath>
#include <gtest/gtest.h>

#include "bvxl/conv3d.h"
#include "bvxl/error.h"
#include "oracles.h"

using namespace bvxl;

namespace {

ConvSpec spec(std::size_t cin, std::size_t f, std::size_t l, std::size_t p, Extent3 bounds = {1, 1, 1}) {
  ConvSpec s;
  s.in_channels = cin;
  s.out_channels = f;
  s.dilation = l;
  s.padding = p;
  s.kernel_bounds = bounds;
  return s;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Conv3d, ZeroInputZeroBiasGivesZero) {
  const auto s = spec(2, 3, 2, 2);
  Rng rng(1);
  Tensor w(s.weight_shape(), oracle::random_vector(shape_numel(s.weight_shape()), rng));
  auto out = dilated_conv3d(Tensor::zeros({2, 5, 5, 5}), w, Tensor::zeros({3}), s);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3d, CenterKernelIsIdentity) {
  Rng rng(2);
  for (std::size_t l : {1, 2, 4, 8}) {
    const auto s = spec(1, 1, l, l);
    std::vector<double> w(27, 0.0);
    w[13] = 1.0;
    Tensor in({1, 6, 7, 5}, oracle::random_vector(210, rng));
    auto out = dilated_conv3d(in, Tensor(s.weight_shape(), w), Tensor(), s);
    ASSERT_EQ(out.shape(), in.shape());
    for (std::size_t i = 0; i < 210; ++i) EXPECT_EQ(out.at(i), in.at(i));
  }
}

TEST(Conv3d, MatchesBruteForceOracle) {
  Rng rng(3);
  const auto s = spec(1, 2, 2, 2);
  auto in = oracle::random_vector(125, rng);
  auto w = oracle::random_vector(2 * 27, rng);
  auto b = oracle::random_vector(2, rng);
  auto out = dilated_conv3d(Tensor({1, 5, 5, 5}, in), Tensor(s.weight_shape(), w), Tensor({2}, b), s);
  EXPECT_LT(max_abs_diff(out.values(), oracle::brute_conv3d(in, 5, 5, 5, w, b, s)), 1e-12);
}

TEST(Conv3d, OracleEquivalenceAcrossDilationsAndShapes) {
  Rng rng(4);
  const std::size_t dil[] = {1, 2, 4, 8};
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t l = dil[trial % 4];
    const std::size_t cin = 1 + rng.index(3), f = 1 + rng.index(3);
    const Extent3 bounds{rng.index(2), 1, rng.index(2)};
    const std::size_t p = rng.index(l + 1) + (trial % 3 == 0 ? l : 0);
    const std::size_t D = 2 * l + 1 + rng.index(4), H = 2 * l + 1 + rng.index(3), W = 2 * l + 1 + rng.index(4);
    const auto s = spec(cin, f, l, p, bounds);
    auto in = oracle::random_vector(cin * D * H * W, rng);
    auto w = oracle::random_vector(shape_numel(s.weight_shape()), rng);
    auto b = oracle::random_vector(f, rng);
    auto out = dilated_conv3d(Tensor({cin, D, H, W}, in), Tensor(s.weight_shape(), w), Tensor({f}, b), s);
    const auto ref = oracle::brute_conv3d(in, D, H, W, w, b, s);
    ASSERT_EQ(out.numel(), ref.size());
    EXPECT_LT(max_abs_diff(out.values(), ref), 1e-12) << "trial " << trial;
  }
}

TEST(Conv3d, Linearity) {
  Rng rng(5);
  const auto s = spec(2, 2, 2, 2);
  Tensor w(s.weight_shape(), oracle::random_vector(shape_numel(s.weight_shape()), rng));
  auto x = oracle::random_vector(2 * 64, rng), y = oracle::random_vector(2 * 64, rng);
  std::vector<double> mix(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 1.7 * x[i] - 0.4 * y[i];
  auto cx = dilated_conv3d(Tensor({2, 4, 4, 4}, x), w, Tensor(), s);
  auto cy = dilated_conv3d(Tensor({2, 4, 4, 4}, y), w, Tensor(), s);
  auto cm = dilated_conv3d(Tensor({2, 4, 4, 4}, mix), w, Tensor(), s);
  for (std::size_t i = 0; i < cm.numel(); ++i) EXPECT_NEAR(cm.at(i), 1.7 * cx.at(i) - 0.4 * cy.at(i), 1e-10);
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  for (std::size_t l : {1, 2}) {
    const auto s = spec(2, 3, l, l);
    Tensor in({2, 4, 4, 4}, oracle::random_vector(128, rng), true);
    Tensor w(s.weight_shape(), oracle::random_vector(shape_numel(s.weight_shape()), rng, 0.3), true);
    Tensor b({3}, oracle::random_vector(3, rng), true);
    Tensor probe({3, 4, 4, 4}, oracle::random_vector(192, rng));
    auto check = oracle::finite_difference_check(
        {in, w, b}, [&] { return sum(mul(dilated_conv3d(in, w, b, s), probe)); });
    EXPECT_LT(check.max_rel_error, 1e-6) << check.worst;
  }
}

TEST(Conv3d, PointwiseKernel) {
  Rng rng(7);
  const auto s = spec(3, 2, 1, 0, {0, 0, 0});
  auto in = oracle::random_vector(3 * 27, rng);
  auto w = oracle::random_vector(6, rng);
  auto b = oracle::random_vector(2, rng);
  auto out = dilated_conv3d(Tensor({3, 3, 3, 3}, in), Tensor(s.weight_shape(), w), Tensor({2}, b), s);
  EXPECT_LT(max_abs_diff(out.values(), oracle::brute_conv3d(in, 3, 3, 3, w, b, s)), 1e-12);
}

TEST(Conv3dGaussianSample, MatchesMomentConvolutions) {
  Rng rng(8);
  for (const auto& s : {spec(2, 3, 1, 1), spec(2, 3, 2, 2), spec(2, 3, 1, 0, {0, 0, 0})}) {
    auto in = oracle::random_vector(128, rng);
    auto wm = oracle::random_vector(shape_numel(s.weight_shape()), rng, 0.3);
    auto wv = oracle::random_vector(wm.size(), rng, 0.2);
    for (auto& v : wv) v = v * v + 1e-3;
    auto noise = oracle::random_vector(192, rng);
    std::vector<double> in_sq(in.size()), zero(3, 0.0);
    for (std::size_t i = 0; i < in.size(); ++i) in_sq[i] = in[i] * in[i];
    const auto mean = oracle::brute_conv3d(in, 4, 4, 4, wm, zero, s);
    const auto var = oracle::brute_conv3d(in_sq, 4, 4, 4, wv, zero, s);
    std::vector<double> expect(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) expect[i] = mean[i] + std::sqrt(var[i]) * noise[i];
    auto out = conv3d_gaussian_sample(Tensor({2, 4, 4, 4}, in), Tensor(s.weight_shape(), wm),
                                      Tensor(s.weight_shape(), wv), s, noise);
    EXPECT_LT(max_abs_diff(out.values(), expect), 1e-12);
  }
}

TEST(Conv3dGaussianSample, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  for (const auto& s : {spec(2, 3, 1, 1), spec(2, 3, 2, 2), spec(2, 3, 1, 0, {0, 0, 0})}) {
    Tensor in({2, 4, 4, 4}, oracle::random_vector(128, rng), true);
    Tensor wm(s.weight_shape(), oracle::random_vector(shape_numel(s.weight_shape()), rng, 0.3), true);
    auto wv_values = oracle::random_vector(wm.numel(), rng, 0.2);
    for (auto& v : wv_values) v = v * v + 1e-2;
    Tensor wv(s.weight_shape(), wv_values, true);
    auto noise = oracle::random_vector(192, rng);
    Tensor probe({3, 4, 4, 4}, oracle::random_vector(192, rng));
    auto check = oracle::finite_difference_check(
        {in, wm, wv}, [&] { return sum(mul(conv3d_gaussian_sample(in, wm, wv, s, noise), probe)); });
    EXPECT_LT(check.max_rel_error, 1e-6) << check.worst;
  }
}

TEST(Conv3dGaussianSample, RejectsMismatchedVarianceAndNoise) {
  const auto s = spec(1, 1, 1, 1);
  Tensor in({1, 2, 2, 2}, std::vector<double>(8, 1.0));
  Tensor w(s.weight_shape(), std::vector<double>(27, 0.1));
  Tensor bad({1, 1, 1, 1, 1}, std::vector<double>(1, 0.1));
  EXPECT_THROW(conv3d_gaussian_sample(in, w, bad, s, std::vector<double>(8)), ShapeError);
  EXPECT_THROW(conv3d_gaussian_sample(in, w, w, s, std::vector<double>(7)), ShapeError);
}

TEST(Conv3d, BadGeometryNamesAxis) {
  const auto s = spec(1, 1, 4, 0);
  try {
    s.output_extent({9, 9, 5});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
  Tensor w(s.weight_shape(), std::vector<double>(27, 0.0));
  EXPECT_THROW(dilated_conv3d(Tensor::zeros({2, 9, 9, 9}), w, Tensor(), s), ShapeError);
}

TEST(ReceptiveField, SingleAndStacked) {
  std::vector<ConvSpec> one{spec(1, 1, 1, 1)};
  EXPECT_EQ(receptive_field(one), (Extent3{3, 3, 3}));
  std::vector<ConvSpec> stack;
  for (std::size_t l : {1, 1, 1, 2, 4, 8, 1}) stack.push_back(spec(1, 1, l, l));
  EXPECT_EQ(receptive_field(stack), (Extent3{37, 37, 37}));
  stack.push_back(spec(1, 1, 1, 0, {0, 0, 0}));
  EXPECT_EQ(receptive_field(stack), (Extent3{37, 37, 37}));
}
