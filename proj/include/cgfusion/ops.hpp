#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cgfusion/tensor.hpp"

// Forward and backward kernels for the fixed layer vocabulary of the
// classifier. All functions are pure and reentrant.
namespace cgf::ops {

// floor((in + 2*pad - kernel) / stride) + 1; throws ConfigError when the
// padded input is smaller than the kernel.
int conv_output_extent(int in, int kernel, int stride, int padding);

// input N x C x H x W, weight O x C x k x k, bias O (or empty).
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                      int padding);

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                            int stride, int padding, bool need_input_grad = true);

struct MaxPoolResult {
  Tensor output;
  // Flat input index of the maximum of every output cell.
  std::vector<std::size_t> argmax;
};

// Pools the last two axes. Windows must tile the input exactly.
MaxPoolResult maxpool2d_forward(const Tensor& input, int kernel, int stride);
// Routes each output gradient to its forward argmax; every other input
// position receives zero.
Tensor maxpool2d_backward(const Tensor& grad_output, std::span<const std::size_t> argmax,
                          const Shape& input_shape);

Tensor avgpool2d(const Tensor& input, int kernel, int stride);
Tensor avgpool2d_backward(const Tensor& grad_output, const Shape& input_shape, int kernel,
                          int stride);

// Replicates every value of the last two axes into a factor x factor block.
Tensor upsample_nearest(const Tensor& input, int factor);
// Half-pixel-centre bilinear resize of the last two axes (align_corners = false).
Tensor upsample_bilinear(const Tensor& input, int target_h, int target_w);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

// input N x in, weight out x in, bias out.
Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output);

// Row-wise softmax of an N x K tensor.
Tensor softmax(const Tensor& logits);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, same shape as logits
};

// Mean cross-entropy over the batch. Takes raw pre-softmax scores.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace cgf::ops
