#include <gtest/gtest.h>

#include <cmath>

#include "bvxl/error.h"
#include "bvxl/tensor.h"
#include "oracles.h"

using namespace bvxl;

TEST(Tensor, ConstructionChecksShape) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}, {}), ShapeError);
  EXPECT_THROW(Tensor({0, 3}, {}), ShapeError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.ndim(), 2u);
}

TEST(Tensor, ReluAndSigmoidValues) {
  Tensor x({3}, {-1, 0, 2});
  auto r = relu(x);
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
}

TEST(Tensor, ReluPropagatesNan) {
  EXPECT_TRUE(std::isnan(relu(Tensor::scalar(std::nan(""))).item()));
}

TEST(Tensor, SigmoidDerivativeAtZero) {
  Tensor x = Tensor::scalar(0.0, true);
  sigmoid(x).backward();
  EXPECT_NEAR(x.grad()[0], 0.25, 1e-15);
  const double h = 1e-5;
  const double fd = (1 / (1 + std::exp(-h)) - 1 / (1 + std::exp(h))) / (2 * h);
  EXPECT_NEAR(x.grad()[0], fd, 1e-8);
}

TEST(Tensor, Reductions) {
  Tensor x({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(sum(x).item(), 10.0);
  EXPECT_EQ(reduce(ReduceOp::mean, Tensor::full({3, 4}, 2.5)).item(), 2.5);
  auto rows = reduce(ReduceOp::sum, x, {1});
  EXPECT_EQ(rows.shape(), (Shape{2}));
  EXPECT_EQ(rows.at(0), 3.0);
  EXPECT_EQ(rows.at(1), 7.0);
  EXPECT_THROW(reduce(ReduceOp::sum, x, {2}), ShapeError);
}

TEST(Tensor, MaxReduceRoutesGradientToFirstIndex) {
  Tensor x({4}, {1, 3, 3, 0}, true);
  reduce(ReduceOp::max, x).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 0}));
}

TEST(Tensor, SumOfSquaresGradient) {
  Rng rng(1);
  Tensor x({5}, oracle::random_vector(5, rng), true);
  sum(square(x)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], 2 * x.at(i), 1e-12);
  auto check = oracle::finite_difference_check({x}, [&] { return sum(square(x)); });
  EXPECT_LT(check.max_rel_error, 1e-6) << check.worst;
}

TEST(Tensor, IdentityAndProductRule) {
  Tensor x = Tensor::scalar(2.0, true), y = Tensor::scalar(3.0, true);
  x.backward();
  EXPECT_EQ(x.grad()[0], 1.0);
  x.zero_grad();
  mul(x, y).backward();
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_EQ(y.grad()[0], 2.0);
}

TEST(Tensor, GradientAccumulatesAcrossUses) {
  Tensor x({3}, {1, 2, 3}, true);
  sum(add(mul(x, x), x)).backward();  // d/dx (x^2 + x) = 2x + 1
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 2 * x.at(i) + 1);
}

TEST(Tensor, ScalarBroadcastGradientIsSum) {
  Rng rng(2);
  Tensor x({6}, oracle::random_vector(6, rng), true);
  Tensor b = Tensor::scalar(0.7, true);
  Tensor w({6}, oracle::random_vector(6, rng));
  sum(mul(add(x, b), w)).backward();
  double expected = 0;
  for (std::size_t i = 0; i < 6; ++i) expected += x.grad()[i];
  EXPECT_NEAR(b.grad()[0], expected, 1e-14);
}

TEST(Tensor, ShapeMismatchNamesShapes) {
  Tensor a({2, 3}, std::vector<double>(6, 1.0)), b({3, 2}, std::vector<double>(6, 1.0));
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
  }
}

TEST(Tensor, NoLeakageBetweenGraphs) {
  Tensor x({3}, {0.5, -1, 2}, true);
  sum(exp(x)).backward();
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  sum(exp(x)).backward();
  std::vector<double> g2(x.grad().begin(), x.grad().end());
  EXPECT_EQ(g1, g2);
}

TEST(Tensor, DomainErrors) {
  EXPECT_THROW(log(Tensor({2}, {1.0, 0.0})), NumericalError);
  EXPECT_THROW(bvxl::sqrt(Tensor({1}, {-1.0})), NumericalError);
  EXPECT_THROW(Tensor({2}, {1, 2}).backward(), ShapeError);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  Tensor x({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard g;
    y = sum(square(x));
  }
  EXPECT_FALSE(y.requires_grad());
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const std::size_t C = 50;
  Tensor logits({C, 2, 1, 1}, std::vector<double>(C * 2, 0.3));
  std::vector<std::int32_t> labels{7, 42};
  EXPECT_NEAR(softmax_cross_entropy(logits, labels).item(), 2 * std::log(50.0), 1e-12);
  EXPECT_NEAR(std::log(50.0), 3.9120, 1e-4);
}

TEST(CrossEntropy, SaturatedMarginIsZero) {
  std::vector<double> v{0, 100, 0};
  Tensor logits({3, 1}, v);
  std::vector<std::int32_t> labels{1};
  EXPECT_LT(softmax_cross_entropy(logits, labels).item(), 1e-8);
}

TEST(CrossEntropy, MatchesDirectOracle) {
  Rng rng(3);
  const std::size_t C = 3, V = 4;
  Tensor logits({C, V}, oracle::random_vector(C * V, rng, 2.0), true);
  std::vector<std::int32_t> labels{0, 2, 1, 2};
  auto loss = softmax_cross_entropy(logits, labels);
  loss.backward();
  double expected = 0;
  for (std::size_t v = 0; v < V; ++v) {
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits.at(c * V + v));
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(logits.at(c * V + v)) / z;
      EXPECT_NEAR(logits.grad()[c * V + v], p - (static_cast<int>(c) == labels[v] ? 1.0 : 0.0), 1e-10);
    }
    expected -= std::log(std::exp(logits.at(static_cast<std::size_t>(labels[v]) * V + v)) / z);
  }
  EXPECT_NEAR(loss.item(), expected, 1e-10);
}

TEST(CrossEntropy, OutOfRangeLabelIsDataError) {
  Tensor logits({3, 1}, {0, 0, 0});
  std::vector<std::int32_t> labels{3};
  EXPECT_THROW(softmax_cross_entropy(logits, labels), DataError);
}

TEST(GradientProperty, ComposedGraphMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor a({4, 3}, oracle::random_vector(12, rng), true);
  Tensor b({4, 3}, oracle::random_vector(12, rng), true);
  Tensor s({4}, oracle::random_vector(4, rng), true);
  auto f = [&] {
    auto h = add(mul(sigmoid(a), softplus(b)), affine(exp(affine(b, 0.3)), 0.5, -0.1));
    auto h2 = scale_channels(add_channel_bias(square(h), s), s);
    return add(reduce(ReduceOp::mean, h2), sum(bvxl::sqrt(affine(square(a), 1.0, 1.0))));
  };
  auto check = oracle::finite_difference_check({a, b, s}, f);
  EXPECT_GT(check.checked, 20u);
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}
