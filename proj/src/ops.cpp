#include "viewfuse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "viewfuse/error.hpp"

namespace viewfuse {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return;
  std::string where;
  if (a.rank() != b.rank()) {
    where = "rank " + std::to_string(a.rank()) + " vs " + std::to_string(b.rank());
  } else {
    for (int d = 0; d < a.rank(); ++d) {
      if (a.shape()[d] != b.shape()[d]) {
        where = "dim " + std::to_string(d) + " (" + std::to_string(a.shape()[d]) +
                " vs " + std::to_string(b.shape()[d]) + ")";
        break;
      }
    }
  }
  throw ShapeError(std::string(op) + ": shape mismatch at " + where + ", " +
                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& t, int rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Gathers receptive fields so that the convolution becomes one GEMM.
void im2col(const double* x, int channels, int h, int w, int k, int out_h,
            int out_w, const ConvOptions& o, double* cols) {
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * n;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * o.stride - o.padding + ki * o.dilation;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * o.stride - o.padding + kj * o.dilation;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int channels, int h, int w, int k,
                int out_h, int out_w, const ConvOptions& o, double* dx) {
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row =
            cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * n;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * o.stride - o.padding + ki * o.dilation;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          double* dst = dx + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * o.stride - o.padding + kj * o.dilation;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, std::string_view op, Fwd fwd, Bwd dfdx) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::make_op(op, x.shape(), std::move(out), {x},
                         [dfdx](detail::Node& self) {
                           auto& in = *self.parents[0];
                           auto& g = in.grad;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             g[i] += self.grad[i] * dfdx(in.value[i]);
                           }
                         });
}

void accumulate(detail::Node& parent, const std::vector<double>& g,
                double scale) {
  if (!parent.requires_grad) return;
  auto& dst = parent.grad;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * g[i];
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              ConvOptions opts) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != c_in) {
    throw ShapeError("conv2d: kernel dim 1 (input channels) is " +
                     std::to_string(kernel.dim(1)) + " but input has " +
                     std::to_string(c_in) + " channels");
  }
  if (kernel.dim(3) != k) {
    throw ShapeError("conv2d: kernel dims 2 and 3 differ (" +
                     std::to_string(k) + " vs " + std::to_string(kernel.dim(3)) +
                     ")");
  }
  if (k % 2 == 0) {
    throw ShapeError("conv2d: kernel size (dim 2) must be odd, got " +
                     std::to_string(k));
  }
  if (bias.dim(0) != c_out) {
    throw ShapeError("conv2d: bias dim 0 is " + std::to_string(bias.dim(0)) +
                     " but kernel has " + std::to_string(c_out) +
                     " output channels");
  }
  if (opts.padding < 0 || opts.stride < 1 || opts.dilation < 1) {
    throw ShapeError("conv2d: invalid padding/stride/dilation");
  }
  const int span = opts.dilation * (k - 1) + 1;
  const int out_h = (h + 2 * opts.padding - span) / opts.stride + 1;
  const int out_w = (w + 2 * opts.padding - span) / opts.stride + 1;
  if (h + 2 * opts.padding < span || out_h <= 0) {
    throw ShapeError("conv2d: input height (dim 1) " + std::to_string(h) +
                     " too small for kernel");
  }
  if (w + 2 * opts.padding < span || out_w <= 0) {
    throw ShapeError("conv2d: input width (dim 2) " + std::to_string(w) +
                     " too small for kernel");
  }

  const int rows = c_in * k * k;
  const int n = out_h * out_w;
  // Every GEMM operand lives in Eigen-owned (aligned) storage: with unaligned
  // heap buffers Eigen's vectorized kernels pick their summation order from
  // the buffer address, which would make results vary between runs.
  auto cols = std::make_shared<RowMat>(rows, n);
  im2col(input.values().data(), c_in, h, w, k, out_h, out_w, opts,
         cols->data());

  std::vector<double> out(static_cast<std::size_t>(c_out) * n);
  {
    const RowMat wm = ConstMapMat(kernel.values().data(), c_out, rows);
    const RowMat om = wm * *cols;
    const auto b = bias.values();
    for (int co = 0; co < c_out; ++co) {
      for (int j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(co) * n + j] = om(co, j) + b[co];
      }
    }
  }

  return Tensor::make_op(
      "conv2d", {c_out, out_h, out_w}, std::move(out), {input, kernel, bias},
      [=](detail::Node& self) {
        auto& in = *self.parents[0];
        auto& ker = *self.parents[1];
        auto& bi = *self.parents[2];
        const RowMat gout = ConstMapMat(self.grad.data(), c_out, n);
        if (ker.requires_grad) {
          const RowMat gw = gout * cols->transpose();
          for (int i = 0; i < c_out * rows; ++i) ker.grad[i] += gw.data()[i];
        }
        if (bi.requires_grad) {
          for (int co = 0; co < c_out; ++co) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += gout(co, j);
            bi.grad[co] += acc;
          }
        }
        if (in.requires_grad) {
          const RowMat wm = ConstMapMat(ker.value.data(), c_out, rows);
          const RowMat gcols = wm.transpose() * gout;
          col2im_add(gcols.data(), c_in, h, w, k, out_h, out_w, opts,
                     in.grad.data());
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus",
      [](double v) {
        return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      },
      [](double v) { return sigmoid(v); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_op("add", a.shape(), std::move(out), {a, b},
                         [](detail::Node& self) {
                           accumulate(*self.parents[0], self.grad, 1.0);
                           accumulate(*self.parents[1], self.grad, 1.0);
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_op("sub", a.shape(), std::move(out), {a, b},
                         [](detail::Node& self) {
                           accumulate(*self.parents[0], self.grad, 1.0);
                           accumulate(*self.parents[1], self.grad, -1.0);
                         });
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_op("elementwise_mul", a.shape(), std::move(out), {a, b},
                         [](detail::Node& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           const auto& g = self.grad;
                           if (pa.requires_grad) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               pa.grad[i] += g[i] * pb.value[i];
                           }
                           if (pb.requires_grad) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               pb.grad[i] += g[i] * pa.value[i];
                           }
                         });
}

Tensor elementwise_div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_div");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return Tensor::make_op("elementwise_div", a.shape(), std::move(out), {a, b},
                         [](detail::Node& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           const auto& g = self.grad;
                           if (pa.requires_grad) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               pa.grad[i] += g[i] / pb.value[i];
                           }
                           if (pb.requires_grad) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               const double q = pb.value[i];
                               pb.grad[i] -= g[i] * pa.value[i] / (q * q);
                             }
                           }
                         });
}

Tensor scalar_mul(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return Tensor::make_op("scalar_mul", a.shape(), std::move(out), {a},
                         [s](detail::Node& self) {
                           accumulate(*self.parents[0], self.grad, s);
                         });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  return Tensor::make_op("add_scalar", a.shape(), std::move(out), {a},
                         [](detail::Node& self) {
                           accumulate(*self.parents[0], self.grad, 1.0);
                         });
}

Tensor sum_over_views(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("sum_over_views: empty list");
  std::vector<double> out(xs[0].numel(), 0.0);
  for (const auto& x : xs) {
    require_same_shape(xs[0], x, "sum_over_views");
    const auto v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return Tensor::make_op("sum_over_views", xs[0].shape(), std::move(out),
                         {xs.begin(), xs.end()}, [](detail::Node& self) {
                           for (auto& p : self.parents)
                             accumulate(*p, self.grad, 1.0);
                         });
}

Tensor tile_channels(const Tensor& x, int channels) {
  require_rank(x, 3, "tile_channels", "input");
  if (x.dim(0) != 1) {
    throw ShapeError("tile_channels: dim 0 must be 1, got " +
                     std::to_string(x.dim(0)));
  }
  if (channels < 1) throw ShapeError("tile_channels: channels must be >= 1");
  const std::size_t plane = x.numel();
  std::vector<double> out(plane * channels);
  const auto v = x.values();
  for (int c = 0; c < channels; ++c)
    std::copy(v.begin(), v.end(), out.begin() + c * plane);
  return Tensor::make_op("tile_channels", {channels, x.dim(1), x.dim(2)},
                         std::move(out), {x},
                         [plane, channels](detail::Node& self) {
                           auto& p = *self.parents[0];
                           for (int c = 0; c < channels; ++c)
                             for (std::size_t i = 0; i < plane; ++i)
                               p.grad[i] += self.grad[c * plane + i];
                         });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::make_op("sum", {1}, {s}, {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    for (auto& g : p.grad) g += self.grad[0];
  });
}

namespace {

Tensor squared_error(const Tensor& pred, const Tensor& target, bool mean,
                     const char* op) {
  require_same_shape(pred, target, op);
  const auto pv = pred.values(), tv = target.values();
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    s += d * d;
  }
  const double scale = mean ? 1.0 / static_cast<double>(pv.size()) : 1.0;
  return Tensor::make_op(op, {1}, {s * scale}, {pred, target},
                         [scale](detail::Node& self) {
                           auto& p = *self.parents[0];
                           auto& t = *self.parents[1];
                           const double g = 2.0 * scale * self.grad[0];
                           for (std::size_t i = 0; i < p.value.size(); ++i) {
                             const double d = g * (p.value[i] - t.value[i]);
                             if (p.requires_grad) p.grad[i] += d;
                             if (t.requires_grad) t.grad[i] -= d;
                           }
                         });
}

}  // namespace

Tensor mse(const Tensor& pred, const Tensor& target) {
  return squared_error(pred, target, true, "mse");
}

Tensor sse(const Tensor& pred, const Tensor& target) {
  return squared_error(pred, target, false, "sse");
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool", "input");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(c, 0.0);
  const auto v = x.values();
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += v[ch * plane + i];
    out[ch] = s / static_cast<double>(plane);
  }
  return Tensor::make_op("global_avg_pool", {c, 1, 1}, std::move(out), {x},
                         [c, plane](detail::Node& self) {
                           auto& p = *self.parents[0];
                           for (int ch = 0; ch < c; ++ch) {
                             const double g =
                                 self.grad[ch] / static_cast<double>(plane);
                             for (std::size_t i = 0; i < plane; ++i)
                               p.grad[ch * plane + i] += g;
                           }
                         });
}

Tensor bce_with_logits(const Tensor& logit, double label) {
  if (logit.numel() != 1) {
    throw ShapeError("bce_with_logits: logit must have one element, got " +
                     shape_str(logit.shape()));
  }
  const double z = logit.values()[0];
  const double loss =
      std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  return Tensor::make_op("bce_with_logits", {1}, {loss}, {logit},
                         [label](detail::Node& self) {
                           auto& p = *self.parents[0];
                           p.grad[0] +=
                               self.grad[0] * (sigmoid(p.value[0]) - label);
                         });
}

Tensor gradient_reversal(const Tensor& x, double scale) {
  std::vector<double> out(x.values().begin(), x.values().end());
  return Tensor::make_op("gradient_reversal", x.shape(), std::move(out), {x},
                         [scale](detail::Node& self) {
                           accumulate(*self.parents[0], self.grad, -scale);
                         });
}

Tensor bilinear_sample(const Tensor& input, const Tensor& grid) {
  require_rank(input, 3, "bilinear_sample", "input");
  if (grid.rank() != 3 || grid.dim(2) != 2) {
    throw ShapeError("bilinear_sample: grid must be [H_out,W_out,2], got " +
                     shape_str(grid.shape()));
  }
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int out_h = grid.dim(0), out_w = grid.dim(1);
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  struct Taps {
    std::array<std::size_t, 4> index{};
    std::array<double, 4> weight{};
  };
  auto taps = std::make_shared<std::vector<Taps>>(n);
  const auto g = grid.values();
  for (std::size_t o = 0; o < n; ++o) {
    const double x = g[2 * o], y = g[2 * o + 1];
    Taps& t = (*taps)[o];
    if (!(x > -1.0 && x < w && y > -1.0 && y < h)) continue;
    const double fx = std::floor(x), fy = std::floor(y);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const double ax = x - fx, ay = y - fy;
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay,
                          ax * ay};
    for (int k = 0; k < 4; ++k) {
      if (xs[k] >= 0 && xs[k] < w && ys[k] >= 0 && ys[k] < h) {
        t.index[k] = static_cast<std::size_t>(ys[k]) * w + xs[k];
        t.weight[k] = ws[k];
      }
    }
  }

  std::vector<double> out(static_cast<std::size_t>(c) * n);
  const auto v = input.values();
  for (int ch = 0; ch < c; ++ch) {
    const double* src = v.data() + ch * plane;
    double* dst = out.data() + ch * n;
    for (std::size_t o = 0; o < n; ++o) {
      const Taps& t = (*taps)[o];
      dst[o] = t.weight[0] * src[t.index[0]] + t.weight[1] * src[t.index[1]] +
               t.weight[2] * src[t.index[2]] + t.weight[3] * src[t.index[3]];
    }
  }
  return Tensor::make_op(
      "bilinear_sample", {c, out_h, out_w}, std::move(out), {input, grid},
      [=](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (int ch = 0; ch < c; ++ch) {
          double* dst = p.grad.data() + ch * plane;
          const double* src = self.grad.data() + ch * n;
          for (std::size_t o = 0; o < n; ++o) {
            const Taps& t = (*taps)[o];
            for (int k = 0; k < 4; ++k) dst[t.index[k]] += t.weight[k] * src[o];
          }
        }
      });
}

}  // namespace viewfuse
