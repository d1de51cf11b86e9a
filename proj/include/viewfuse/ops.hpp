#pragma once

#include <span>
#include <vector>

#include "viewfuse/tensor.hpp"

namespace viewfuse {

struct ConvOptions {
  int padding = 0;
  int stride = 1;
  int dilation = 1;
};

// Cross-correlation of input [C_in,H,W] with kernel [C_out,C_in,k,k] plus
// bias [C_out]. Output spatial size is (H + 2p - d(k-1) - 1) / s + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              ConvOptions opts = {});

Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor elementwise_div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// Elementwise sum of equally shaped tensors, reduced in list order.
Tensor sum_over_views(std::span<const Tensor> xs);
// Repeats a [1,H,W] map along the channel axis to [C,H,W].
Tensor tile_channels(const Tensor& x, int channels);

// Scalar reductions ([1]-shaped results).
Tensor sum(const Tensor& x);
Tensor mse(const Tensor& pred, const Tensor& target);
// Summed squared error.
Tensor sse(const Tensor& pred, const Tensor& target);
// Mean over the spatial axes: [C,H,W] -> [C,1,1].
Tensor global_avg_pool(const Tensor& x);
// Binary cross-entropy between sigmoid(logit) and a {0,1} label, for a
// single-element logit.
Tensor bce_with_logits(const Tensor& logit, double label);
// Identity forward; the backward pass multiplies the gradient by -scale.
Tensor gradient_reversal(const Tensor& x, double scale);

// Samples input [C,H,W] at continuous source coordinates held in grid
// [H_out,W_out,2] as (x, y) pairs in source-pixel units (pixel centers at
// integers). Neighbours outside the source contribute zero. Differentiable
// with respect to input only.
Tensor bilinear_sample(const Tensor& input, const Tensor& grid);

}  // namespace viewfuse
