#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "partscope/tensor.hpp"

namespace partscope::nn {

// Dense kernels shared by the segmenter and the feature extractor. All are
// OpenMP-parallel with fixed work partitioning, so results do not depend on
// the worker count. tests/ref holds plain serial twins used as oracles.

// 3x3 convolution, reflect padding 1, stride 1 or 2. Output spatial size is
// ceil(in/stride). weights shape (Co, Ci, 3, 3), bias length Co.
void conv3x3_forward(const Tensor& in, const Tensor& weights, const Tensor& bias, int stride,
                     Tensor& out);

// Gradients of conv3x3_forward. Any of the outputs may be null; non-null
// gradients are accumulated into (+=), so buffers must be pre-shaped.
void conv3x3_backward(const Tensor& in, const Tensor& weights, int stride, const Tensor& d_out,
                      Tensor* d_in, Tensor* d_weights, Tensor* d_bias);

// 1x1 convolution (a per-pixel linear map). weights shape (Co, Ci).
void conv1x1_forward(const Tensor& in, const Tensor& weights, const Tensor& bias, Tensor& out);
void conv1x1_backward(const Tensor& in, const Tensor& weights, const Tensor& d_out, Tensor* d_in,
                      Tensor* d_weights, Tensor* d_bias);

// Exact fractional area-average pooling from (h, w) to (oh, ow). Each output
// cell averages the input over its box with per-pixel overlap weights; the
// map is linear, and the identity when oh == h and ow == w.
struct AreaPoolPlan {
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  // per output row/col: list of (input index, overlap weight); weights of a
  // cell sum to the box length
  std::vector<std::vector<std::pair<std::size_t, double>>> rows, cols;
  double box_h = 0.0, box_w = 0.0;
};

AreaPoolPlan make_area_pool(std::size_t in_h, std::size_t in_w, std::size_t out_h,
                            std::size_t out_w);
void area_pool_forward(const AreaPoolPlan& plan, const Tensor& in, Tensor& out);
void area_pool_backward(const AreaPoolPlan& plan, const Tensor& d_out, Tensor& d_in);  // +=

// Nearest-neighbor resize to (oh, ow); source index = floor(i * in / out).
void upsample_nearest_forward(const Tensor& in, std::size_t oh, std::size_t ow, Tensor& out);
void upsample_nearest_backward(const Tensor& d_out, std::size_t ih, std::size_t iw,
                               Tensor& d_in);  // +=

// Per-pixel softmax over the leading (channel) dimension of (K, h, w).
void softmax_channels(const Tensor& logits, Tensor& probs);
// d_logits += J_softmax^T d_probs, given the forward probabilities.
void softmax_channels_backward(const Tensor& probs, const Tensor& d_probs, Tensor& d_logits);

// Elementwise tanh; backward needs the forward output.
void tanh_forward(Tensor& x);
void tanh_backward(const Tensor& y, const Tensor& d_y, Tensor& d_x);  // +=

// channel concatenation helpers for skip connections
void concat_channels(const Tensor& a, const Tensor& b, Tensor& out);
void split_channels_backward(const Tensor& d_out, Tensor& d_a, Tensor& d_b);  // +=

}  // namespace partscope::nn
