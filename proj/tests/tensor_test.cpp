#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rage/ops.hpp"
#include "rage/tensor.hpp"
#include "test_util.hpp"

using namespace rage;
using rage::testing::max_abs_diff;
using rage::testing::random_tensor;
using T64 = Tensor<double>;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(T64({2, 3}, std::vector<double>(5)), ShapeError);
  T64 t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, InteriorNodesAreImmutable) {
  auto x = random_tensor({2, 2}, 1);
  x.set_requires_grad(true);
  auto y = ops::mul_scalar(x, 2.0);
  EXPECT_THROW(y.mutable_data(), std::logic_error);
  EXPECT_NO_THROW(x.mutable_data());
}

TEST(Conv2d, PointwiseIdentityKernelReproducesInput) {
  auto x = random_tensor({1, 3, 5, 5}, 2);
  std::vector<double> w(9, 0.0);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  auto y = ops::conv2d(x, T64({3, 3, 1, 1}, w), T64::zeros({3}), 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Conv2d, HandComputedTwoByTwo) {
  T64 x({1, 1, 2, 2}, {1, 2, 3, 4});
  T64 w({1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = ops::conv2d(x, w, T64::zeros({1}), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 5.0);
}

TEST(Conv2d, StridedShape) {
  auto y = ops::conv2d(random_tensor({1, 2, 8, 8}, 3), random_tensor({4, 2, 3, 3}, 4),
                       T64::zeros({4}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 4}));
}

TEST(Conv2d, MatchesDirectConvolution) {
  auto x = random_tensor({2, 3, 7, 6}, 5);
  auto w = random_tensor({4, 3, 3, 3}, 6);
  auto b = random_tensor({4}, 7);
  const std::size_t stride = 2, pad = 1;
  auto y = ops::conv2d(x, w, b, stride, pad);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t oy = 0; oy < 4; ++oy)
        for (std::size_t ox = 0; ox < 3; ++ox) {
          double acc = b.data()[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t ki = 0; ki < 3; ++ki)
              for (std::size_t kj = 0; kj < 3; ++kj) {
                const long iy = long(oy * stride + ki) - long(pad);
                const long ix = long(ox * stride + kj) - long(pad);
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                acc += x.data()[((n * 3 + c) * 7 + iy) * 6 + ix] *
                       w.data()[((o * 3 + c) * 3 + ki) * 3 + kj];
              }
          EXPECT_NEAR(y.data()[((n * 4 + o) * 4 + oy) * 3 + ox], acc, 1e-12);
        }
}

TEST(Conv2d, RejectsBadShapes) {
  auto x = random_tensor({1, 2, 4, 4}, 8);
  EXPECT_THROW(ops::conv2d(x, random_tensor({3, 5, 3, 3}, 9), T64::zeros({3}), 1, 1),
               ShapeError);
  EXPECT_THROW(ops::conv2d(x, random_tensor({3, 2, 3, 3}, 9), T64::zeros({2}), 1, 1),
               ShapeError);
  EXPECT_THROW(ops::conv2d(x, random_tensor({3, 2, 7, 7}, 9), T64::zeros({3}), 1, 1),
               ShapeError);
  EXPECT_THROW(ops::conv2d(x, random_tensor({3, 2, 3, 3}, 9), T64::zeros({3}), 0, 1),
               ShapeError);
}

TEST(Conv2d, LinearInInputWithZeroBias) {
  auto w = random_tensor({3, 2, 3, 3}, 10);
  auto x = random_tensor({1, 2, 6, 5}, 11);
  auto y = random_tensor({1, 2, 6, 5}, 12);
  const double a = 0.7, b = -1.3;
  auto lhs = ops::conv2d(ops::add(ops::mul_scalar(x, a), ops::mul_scalar(y, b)), w,
                         T64::zeros({3}), 1, 1);
  auto rhs = ops::add(ops::mul_scalar(ops::conv2d(x, w, T64::zeros({3}), 1, 1), a),
                      ops::mul_scalar(ops::conv2d(y, w, T64::zeros({3}), 1, 1), b));
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
}

TEST(Upsample2x, SingleValue) {
  auto y = ops::upsample2x(T64({1, 1, 1, 1}, {1.0}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 1.0);
}

TEST(Upsample2x, ConstantBlocks) {
  auto y = ops::upsample2x(T64({1, 1, 2, 2}, {1, 2, 3, 4}));
  const std::vector<double> expected = {1, 1, 2, 2, 1, 1, 2, 2,
                                        3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), expected);
}

TEST(Upsample2x, SumQuadruples) {
  auto x = random_tensor({2, 3, 5, 4}, 13);
  auto y = ops::upsample2x(x);
  const double sx = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  const double sy = std::accumulate(y.data().begin(), y.data().end(), 0.0);
  EXPECT_NEAR(sy, 4.0 * sx, 1e-12);
}

TEST(Upsample2x, GradientIsBlockSum) {
  auto x = random_tensor({1, 1, 2, 3}, 14);
  x.set_requires_grad(true);
  auto weights = random_tensor({1, 1, 4, 6}, 15);
  ops::sum(ops::mul(ops::upsample2x(x), weights)).backward();
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t c = 0; c < 3; ++c) {
      double block = 0;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
          block += weights.data()[(2 * y + dy) * 6 + 2 * c + dx];
      EXPECT_NEAR(x.grad()[y * 3 + c], block, 1e-14);
    }
}

TEST(Elementwise, AddNegIsZero) {
  auto x = random_tensor({3, 4}, 16);
  const auto y = ops::add(x, ops::neg(x));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, MulByOneIsIdentity) {
  auto x = random_tensor({3, 4}, 17);
  EXPECT_EQ(max_abs_diff(ops::mul_scalar(x, 1.0), x), 0.0);
}

TEST(Elementwise, MulGradientIsOtherOperand) {
  auto a = random_tensor({2, 5}, 18);
  auto b = random_tensor({2, 5}, 19);
  a.set_requires_grad(true);
  ops::sum(ops::mul(a, b)).backward();
  EXPECT_EQ(max_abs_diff(a.grad(), b.data()), 0.0);
}

TEST(Elementwise, ShapeMismatchRejected) {
  EXPECT_THROW(ops::add(T64::zeros({2, 3}), T64::zeros({3, 2})), ShapeError);
  EXPECT_THROW(ops::mul(T64::zeros({2, 3}), T64::zeros({6})), ShapeError);
  EXPECT_THROW(ops::sub(T64::zeros({1}), T64::zeros({2})), ShapeError);
}

TEST(Activation, SigmoidAndReluValues) {
  EXPECT_EQ(ops::sigmoid(T64::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(ops::relu(T64::scalar(-3.0)).item(), 0.0);
  EXPECT_EQ(ops::relu(T64::scalar(3.0)).item(), 3.0);
}

TEST(Activation, SigmoidSaturatesWithoutNaN) {
  T64 x({2}, {40.0, -40.0});
  x.set_requires_grad(true);
  auto s = ops::sigmoid(x);
  EXPECT_NEAR(s.data()[0], 1.0, 1e-15);
  EXPECT_GT(s.data()[1], 0.0);
  EXPECT_NEAR(s.data()[1], std::exp(-40.0), 1e-25);
  ops::sum(s).backward();
  for (double g : x.grad()) {
    EXPECT_TRUE(std::isfinite(g));
    EXPECT_LE(g, 1e-17);
  }
}

TEST(Activation, ReluTieAtZeroHasZeroGradient) {
  T64 x({3}, {-1.0, 0.0, 2.0});
  x.set_requires_grad(true);
  ops::sum(ops::relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Activation, SigmoidStrictlyInsideUnitInterval) {
  auto x = random_tensor({1000}, 20, -20.0, 20.0);
  const auto y = ops::sigmoid(x);
  for (double s : y.data()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Attention, SingleStepReturnsValues) {
  auto q = random_tensor({2, 1, 3}, 21);
  auto k = random_tensor({2, 1, 3}, 22);
  auto v = random_tensor({2, 1, 4}, 23);
  EXPECT_EQ(max_abs_diff(ops::scaled_dot_attention(q, k, v), v), 0.0);
}

TEST(Attention, OrthonormalKeysSelectMatchingValue) {
  // q = k = scale * I: logits are scale^2/sqrt(4) on the diagonal, 0 elsewhere.
  const std::size_t len = 4;
  const double scale = 6.0;
  std::vector<double> eye(len * len, 0.0);
  for (std::size_t i = 0; i < len; ++i) eye[i * len + i] = scale;
  T64 q({1, len, len}, eye);
  auto v = random_tensor({1, len, 3}, 24);
  auto out = ops::scaled_dot_attention(q, q, v);

  const double diag = std::exp(scale * scale / 2.0);
  const double off = 1.0;
  for (std::size_t r = 0; r < len; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      double expected = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const double wgt = (j == r ? diag : off) / (diag + (len - 1) * off);
        expected += wgt * v.data()[j * 3 + c];
      }
      EXPECT_NEAR(out.data()[r * 3 + c], expected, 1e-12);
      EXPECT_NEAR(out.data()[r * 3 + c], v.data()[r * 3 + c], 1e-6);
    }
  }
}

TEST(Attention, RowsSumToOne) {
  std::vector<double> weights;
  ops::scaled_dot_attention(random_tensor({3, 7, 5}, 25, -3, 3),
                            random_tensor({3, 7, 5}, 26, -3, 3),
                            random_tensor({3, 7, 2}, 27), &weights);
  ASSERT_EQ(weights.size(), 3u * 7 * 7);
  for (std::size_t r = 0; r < 3 * 7; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += weights[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, ZeroKeyDimensionRejected) {
  EXPECT_THROW(ops::scaled_dot_attention(T64::zeros({1, 2, 0}), T64::zeros({1, 2, 0}),
                                         T64::zeros({1, 2, 3})),
               ShapeError);
}

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor({4, 3}, 28);
  x.set_requires_grad(true);
  ops::sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
  auto x = random_tensor({4, 3}, 29);
  x.set_requires_grad(true);
  ops::sum(ops::mul(x, x)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Backward, FanOutAccumulates) {
  auto x = random_tensor({5}, 30);
  x.set_requires_grad(true);
  auto y = ops::sigmoid(x);
  ops::sum(ops::add(ops::mul_scalar(y, 3.0), ops::square(y))).backward();
  for (std::size_t i = 0; i < 5; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
    const double ds = s * (1 - s);
    EXPECT_NEAR(x.grad()[i], 3.0 * ds + 2.0 * s * ds, 1e-14);
  }
}

TEST(Backward, NonScalarLossRejected) {
  auto x = random_tensor({3}, 31);
  x.set_requires_grad(true);
  EXPECT_THROW(ops::mul_scalar(x, 2.0).backward(), ShapeError);
}

TEST(Backward, SecondSweepRejected) {
  auto x = random_tensor({3}, 32);
  x.set_requires_grad(true);
  auto loss = ops::sum(ops::square(x));
  loss.backward();
  EXPECT_THROW(loss.backward(), std::logic_error);
}

TEST(Backward, GradientsAccumulateAcrossGraphsUntilReset) {
  auto x = random_tensor({3}, 33);
  x.set_requires_grad(true);
  ops::sum(x).backward();
  ops::sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NoGradGuardSkipsRecording) {
  auto x = random_tensor({3}, 34);
  x.set_requires_grad(true);
  NoGradGuard guard;
  auto y = ops::sum(ops::square(x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(y.backward(), std::logic_error);
}

TEST(GroupNorm, NormalisesEachGroup) {
  auto x = random_tensor({2, 4, 3, 3}, 35, -5, 5);
  auto y = ops::group_norm(x, T64::full({4}, 1.0), T64::zeros({4}), 2);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t g = 0; g < 2; ++g) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 18; ++i) m += y.data()[(n * 4 + 2 * g) * 9 + i];
      m /= 18;
      for (std::size_t i = 0; i < 18; ++i) {
        const double d = y.data()[(n * 4 + 2 * g) * 9 + i] - m;
        v += d * d;
      }
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 18, 1.0, 1e-4);
    }
  EXPECT_THROW(ops::group_norm(x, T64::full({4}, 1.0), T64::zeros({4}), 3),
               ShapeError);
}

TEST(Sequence, RoundTripAndLayout) {
  auto x = random_tensor({2, 3, 2, 4}, 36);
  auto seq = ops::to_sequence(x);
  ASSERT_EQ(seq.shape(), (Shape{2, 8, 3}));
  EXPECT_EQ(seq.data()[(1 * 8 + 5) * 3 + 2], x.data()[((1 * 3 + 2) * 2 + 1) * 4 + 1]);
  EXPECT_EQ(max_abs_diff(ops::from_sequence(seq, 2, 4), x), 0.0);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    auto x = random_tensor<float>({1, 3, 9, 8}, 37);
    auto w = random_tensor<float>({5, 3, 3, 3}, 38);
    return ops::sigmoid(ops::conv2d(x, w, Tensor<float>::zeros({5}), 1, 1));
  };
  auto a = run(), b = run();
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
