#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "viewfuse/error.hpp"
#include "viewfuse/gradcheck.hpp"
#include "viewfuse/ops.hpp"
#include "viewfuse/scene.hpp"
#include "viewfuse/tensor.hpp"

using namespace viewfuse;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false, double lo = -1, double hi = 1) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Direct six-loop cross-correlation.
std::vector<double> naive_conv(const Tensor& in, const Tensor& ker, const Tensor& bias,
                               ConvOptions o, int& oh, int& ow) {
  const int ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int co = ker.dim(0), k = ker.dim(2);
  oh = (h + 2 * o.padding - o.dilation * (k - 1) - 1) / o.stride + 1;
  ow = (w + 2 * o.padding - o.dilation * (k - 1) - 1) / o.stride + 1;
  std::vector<double> out(static_cast<std::size_t>(co) * oh * ow);
  for (int c = 0; c < co; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = bias.at(c);
        for (int i = 0; i < ci; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = y * o.stride - o.padding + ky * o.dilation;
              const int sx = x * o.stride - o.padding + kx * o.dilation;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              acc += in.at((static_cast<std::size_t>(i) * h + sy) * w + sx) *
                     ker.at(((static_cast<std::size_t>(c) * ci + i) * k + ky) * k + kx);
            }
        out[(static_cast<std::size_t>(c) * oh + y) * ow + x] = acc;
      }
  return out;
}

}  // namespace

TEST(Tensor, SharedNodeAccumulatesGradient) {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Tensor y = sum(elementwise_mul(x, x));  // d/dx = 2x
  y.backward();
  const auto g = x.grad();
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], -4.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
}

TEST(Tensor, DiamondGraphVisitsEachNodeOnce) {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor b = scalar_mul(a, 3.0);
  Tensor loss = sum(add(b, b));  // 6a
  loss.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 6.0);
}

TEST(Tensor, BackwardMisuseRaisesGraphError) {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true);
  EXPECT_THROW(scalar_mul(a, 2.0).backward(), GraphError);  // not scalar
  Tensor l = sum(a);
  l.backward();
  EXPECT_THROW(l.backward(), GraphError);
  l.reset_graph_grads();
  EXPECT_NO_THROW(l.backward());
  EXPECT_THROW(Tensor().backward(), GraphError);
}

TEST(Tensor, ShapeMismatchNamesDimension) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 4});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dim"), std::string::npos) << e.what();
  }
}

TEST(Tensor, DetachStopsGradient) {
  Tensor a = Tensor::from({1}, {2.0}, true);
  Tensor l = sum(elementwise_mul(a, a.detach()));
  l.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 2.0);
}

TEST(Ops, ConvMatchesNaiveLoops) {
  Rng rng(5);
  const ConvOptions variants[] = {{0, 1, 1}, {1, 1, 1}, {1, 2, 1}, {2, 1, 2}, {3, 2, 3}};
  for (const auto& o : variants) {
    for (int trial = 0; trial < 4; ++trial) {
      const int ci = uniform_int(rng, 1, 3), co = uniform_int(rng, 1, 4);
      const int k = uniform_int(rng, 1, 3) | 1;  // odd: 1 or 3
      Tensor in = random_tensor({ci, uniform_int(rng, 6, 11), uniform_int(rng, 6, 11)}, rng);
      Tensor ker = random_tensor({co, ci, k, k}, rng);
      Tensor b = random_tensor({co}, rng);
      int oh = 0, ow = 0;
      const auto expect = naive_conv(in, ker, b, o, oh, ow);
      const Tensor got = conv2d(in, ker, b, o);
      ASSERT_EQ(got.shape(), (Shape{co, oh, ow}));
      for (std::size_t i = 0; i < expect.size(); ++i) {
        EXPECT_NEAR(got.at(i), expect[i], 1e-12);
      }
    }
  }
}

TEST(Ops, ConvRejectsBadShapes) {
  EXPECT_THROW(conv2d(Tensor::zeros({2, 5, 5}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})),
               ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1})),
               ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 5, 5}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({2})),
               ShapeError);
}

TEST(Ops, BilinearSampleMatchesScalarFormula) {
  Rng rng(9);
  const int c = 2, h = 5, w = 7;
  Tensor in = random_tensor({c, h, w}, rng);
  const int oh = 4, ow = 6;
  std::vector<double> g;
  for (int i = 0; i < oh * ow; ++i) {
    g.push_back(uniform(rng, -1.5, w + 0.5));
    g.push_back(uniform(rng, -1.5, h + 0.5));
  }
  Tensor grid = Tensor::from({oh, ow, 2}, g);
  const Tensor out = bilinear_sample(in, grid);
  auto px = [&](int ch, int y, int x) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return in.at((static_cast<std::size_t>(ch) * h + y) * w + x);
  };
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < oh * ow; ++i) {
      const double x = g[2 * i], y = g[2 * i + 1];
      const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
      const double fx = x - x0, fy = y - y0;
      const double expect = (1 - fx) * (1 - fy) * px(ch, y0, x0) + fx * (1 - fy) * px(ch, y0, x0 + 1) +
                            (1 - fx) * fy * px(ch, y0 + 1, x0) + fx * fy * px(ch, y0 + 1, x0 + 1);
      EXPECT_NEAR(out.at(static_cast<std::size_t>(ch) * oh * ow + i), expect, 1e-12);
    }
  }
}

TEST(Ops, BilinearSampleAtIntegerCoordinatesCopiesPixels) {
  Rng rng(3);
  Tensor in = random_tensor({1, 3, 4}, rng);
  Tensor grid = Tensor::from({1, 2, 2}, {2.0, 1.0, 0.0, 2.0});
  const Tensor out = bilinear_sample(in, grid);
  EXPECT_DOUBLE_EQ(out.at(0), in.at(1 * 4 + 2));
  EXPECT_DOUBLE_EQ(out.at(1), in.at(2 * 4 + 0));
}

TEST(Ops, ElementwiseValues) {
  Tensor x = Tensor::from({4}, {-2.0, -1e-3, 0.0, 3.0});
  const Tensor r = relu(x);
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()),
            (std::vector<double>{0, 0, 0, 3}));
  const Tensor s = softplus(x);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(s.at(i), std::log1p(std::exp(x.at(i))), 1e-14);
  }
  // Large arguments stay finite.
  const Tensor big = softplus(Tensor::from({2}, {800.0, -800.0}));
  EXPECT_DOUBLE_EQ(big.at(0), 800.0);
  EXPECT_GE(big.at(1), 0.0);
}

TEST(Ops, ReductionsAndLosses) {
  Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor t = Tensor::from({2, 2}, {1, 0, 3, 2});
  EXPECT_DOUBLE_EQ(sum(p).item(), 10.0);
  EXPECT_DOUBLE_EQ(sse(p, t).item(), 8.0);
  EXPECT_DOUBLE_EQ(mse(p, t).item(), 2.0);
  const Tensor gp = global_avg_pool(Tensor::from({2, 1, 2}, {1, 3, 5, 7}));
  EXPECT_EQ(gp.shape(), (Shape{2, 1, 1}));
  EXPECT_DOUBLE_EQ(gp.at(0), 2.0);
  EXPECT_DOUBLE_EQ(gp.at(1), 6.0);
  const Tensor tiled = tile_channels(Tensor::from({1, 1, 2}, {4, 5}), 3);
  EXPECT_EQ(tiled.shape(), (Shape{3, 1, 2}));
  EXPECT_DOUBLE_EQ(tiled.at(5), 5.0);
}

TEST(Ops, BceWithLogitsMatchesFormula) {
  for (double z : {-30.0, -2.0, 0.0, 0.7, 40.0}) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    const Tensor l1 = bce_with_logits(Tensor::from({1}, {z}), 1.0);
    const Tensor l0 = bce_with_logits(Tensor::from({1}, {z}), 0.0);
    EXPECT_NEAR(l1.item(), std::log1p(std::exp(-z)), 1e-12) << z;
    EXPECT_NEAR(l0.item(), std::log1p(std::exp(z)), 1e-9 * std::max(1.0, z)) << z;
    if (std::abs(z) < 10) EXPECT_NEAR(l1.item(), -std::log(s), 1e-12);
  }
}

TEST(Ops, GradientReversalFlipsAndScales) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor y = gradient_reversal(x, 0.25);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            (std::vector<double>{1, 2, 3}));
  sum(scalar_mul(y, 2.0)).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, -0.5);
}

TEST(Ops, SumOverViewsKeepsListOrder) {
  std::vector<Tensor> xs{Tensor::from({1}, {1e16}), Tensor::from({1}, {1.0}),
                         Tensor::from({1}, {-1e16})};
  EXPECT_DOUBLE_EQ(sum_over_views(xs).item(), (1e16 + 1.0) - 1e16);
}

TEST(GradCheck, DetectsAWrongBackward) {
  Tensor x = Tensor::from({3}, {0.3, -0.2, 0.9}, true);
  // Forward x^2 with a deliberately wrong gradient of x.
  auto f = [&] {
    std::vector<double> v;
    for (double a : x.values()) v.push_back(a * a);
    Tensor y = Tensor::make_op("bad_square", {3}, v, {x}, [](detail::Node& self) {
      auto& p = *self.parents[0];
      for (std::size_t i = 0; i < 3; ++i) p.grad[i] += self.grad[i] * p.value[i];
    });
    return sum(y);
  };
  GradCheckOptions o;
  o.tolerance = 1e-4;
  EXPECT_FALSE(grad_check(f, {{"x", x}}, o).pass);
}

TEST(GradCheck, RejectsNonFiniteLeaves) {
  Tensor x = Tensor::from({1}, {std::nan("")}, true);
  EXPECT_THROW(grad_check([&] { return sum(x); }, {{"x", x}}, {}), NumericError);
}
