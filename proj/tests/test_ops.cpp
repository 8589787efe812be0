#include <gtest/gtest.h>

#include "fargan/layers.hpp"

namespace fargan {
namespace {

TEST(Tensor, RejectsNonPositiveExtents) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0, 3}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), DimensionError);
}

TEST(Tensor, BackwardNeedsScalarLoss) {
  Tensor<double> x(Shape{2}, 1.0, true);
  EXPECT_THROW(backward(mul_scalar(x, 2.0)), ContractError);
}

TEST(Tensor, LeafGradientsAccumulateUntilCleared) {
  Tensor<double> x(Shape{1}, 3.0, true);
  backward(square(x));
  backward(square(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  backward(square(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tensor, NoGradGuardStopsRecording) {
  Tensor<double> x(Shape{1}, 3.0, true);
  NoGradGuard guard;
  EXPECT_FALSE(square(x).requires_grad());
}

TEST(Ops, ElementwiseShapeMismatchNamesAxis) {
  Tensor<float> a(Shape{2, 3});
  Tensor<float> b(Shape{2, 4});
  try {
    add(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos) << e.what();
  }
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  Rng rng = make_rng(1);
  Tensor<double> x(Shape{1, 1, 5, 5}, normal_vector<double>(rng, 25));
  Tensor<double> w = Tensor<double>::zeros(Shape{1, 1, 3, 3});
  w[4] = 1.0;
  Tensor<double> y = conv2d(x, w, ConvGeometry{1, 1});
  ASSERT_EQ(y.shape(), x.shape());
  for (Index i = 0; i < 25; ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, OnesKernelSumsWindow) {
  Tensor<double> x(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
  Tensor<double> y = conv2d(x, w);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 45.0);
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  Tensor<float> x(Shape{1, 3, 4, 4});
  Tensor<float> w(Shape{2, 4, 3, 3});
  EXPECT_THROW(conv2d(x, w, ConvGeometry{1, 1}), DimensionError);
}

TEST(Conv2d, MatchesDirectLoopWithStride) {
  Rng rng = make_rng(2);
  Tensor<double> x(Shape{2, 3, 7, 6}, normal_vector<double>(rng, 2 * 3 * 7 * 6));
  Tensor<double> w(Shape{4, 3, 3, 3}, normal_vector<double>(rng, 4 * 27));
  Tensor<double> b(Shape{4}, normal_vector<double>(rng, 4));
  Tensor<double> y = conv2d(x, w, b, ConvGeometry{2, 1});
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
  for (Index n = 0; n < 2; ++n) {
    for (Index o = 0; o < 4; ++o) {
      for (Index oy = 0; oy < 4; ++oy) {
        for (Index ox = 0; ox < 3; ++ox) {
          double acc = b[o];
          for (Index c = 0; c < 3; ++c) {
            for (Index ky = 0; ky < 3; ++ky) {
              for (Index kx = 0; kx < 3; ++kx) {
                const Index iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                acc += x.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
            }
          }
          EXPECT_NEAR(y.at(n, o, oy, ox), acc, 1e-12);
        }
      }
    }
  }
}

TEST(TransposedConv2d, K4S2P1DoublesExtent) {
  Tensor<float> x(Shape{1, 3, 2, 2}, 1.0f);
  Tensor<float> w(Shape{3, 5, 4, 4}, 0.1f);
  EXPECT_EQ(transposed_conv2d(x, w).shape(), (Shape{1, 5, 4, 4}));
}

TEST(TransposedConv2d, IsAdjointOfConv) {
  // <conv(x), y> == <x, conv^T(y)> for the same weights.
  Rng rng = make_rng(3);
  Tensor<double> x(Shape{1, 2, 8, 8}, normal_vector<double>(rng, 128));
  Tensor<double> w(Shape{3, 2, 4, 4}, normal_vector<double>(rng, 96));
  Tensor<double> y(Shape{1, 3, 4, 4}, normal_vector<double>(rng, 48));
  const Tensor<double> cx = conv2d(x, w, ConvGeometry{2, 1});
  const Tensor<double> ty = transposed_conv2d(y, w, ConvGeometry{2, 1});
  double lhs = 0, rhs = 0;
  for (Index i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
  for (Index i = 0; i < x.numel(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Pooling, AverageAndMaxOfTwoByTwo) {
  Tensor<float> x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_FLOAT_EQ(avg_pool2d(x, 2)[0], 2.5f);
  EXPECT_FLOAT_EQ(max_pool2d(x, 2)[0], 4.0f);
}

TEST(Pooling, OddExtentIsDimensionError) {
  Tensor<float> x(Shape{1, 1, 3, 4});
  EXPECT_THROW(avg_pool2d(x, 2), DimensionError);
}

TEST(Pooling, MaxTieRoutesGradientToFirstIndex) {
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{5, 5, 1, 5}, true);
  backward(sum(max_pool2d(x, 2)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Softmax, RowsSumToOne) {
  Rng rng = make_rng(4);
  Tensor<double> x(Shape{2, 3, 5}, normal_vector<double>(rng, 30, 10.0));
  Tensor<double> s = softmax(x, 2);
  for (Index r = 0; r < 6; ++r) {
    double acc = 0;
    for (Index j = 0; j < 5; ++j) acc += s[r * 5 + j];
    EXPECT_NEAR(acc, 1.0, 1e-12);
  }
}

TEST(ChannelStats, TwoValueChannel) {
  Tensor<double> h(Shape{1, 1, 1, 2}, std::vector<double>{0, 2});
  const ChannelStats s = channel_stats(h);
  EXPECT_DOUBLE_EQ(s.mu[0], 1.0);
  EXPECT_DOUBLE_EQ(s.sigma[0], 1.0);
}

TEST(ChannelStats, PoolsOverBatchAndSpace) {
  Rng rng = make_rng(5);
  Tensor<double> h(Shape{3, 2, 4, 5}, normal_vector<double>(rng, 120));
  const ChannelStats s = channel_stats(h);
  for (Index c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (Index n = 0; n < 3; ++n)
      for (Index i = 0; i < 20; ++i) m += h[(n * 2 + c) * 20 + i];
    m /= 60;
    for (Index n = 0; n < 3; ++n)
      for (Index i = 0; i < 20; ++i) v += (h[(n * 2 + c) * 20 + i] - m) * (h[(n * 2 + c) * 20 + i] - m);
    EXPECT_NEAR(s.mu[c], m, 1e-12);
    EXPECT_NEAR(s.sigma[c], std::sqrt(v / 60), 1e-12);
  }
}

TEST(ChannelNormalize, ConstantChannelHasZeroOutputAndFiniteGradient) {
  Tensor<double> h(Shape{1, 1, 2, 2}, 3.0, true);
  Tensor<double> y = channel_normalize(h, 1e-5);
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], 0.0);
  backward(sum(mul(y, Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}))));
  for (double g : h.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(ResizeNearest, DownsamplesByStride) {
  Tensor<float> x(Shape{1, 1, 4, 4});
  for (Index i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  Tensor<float> y = resize_nearest(x, 2, 2);
  EXPECT_EQ(std::vector<float>(y.values()), (std::vector<float>{0, 2, 8, 10}));
}

}  // namespace
}  // namespace fargan
