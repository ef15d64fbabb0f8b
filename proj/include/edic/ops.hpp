// Copyright 2026 The EDIC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <vector>

#include "edic/tensor.hpp"

// Differentiable operations over Tensor. Feature maps are laid out as
// [batch, channel, height, width]. Every op validates shapes and throws
// ConfigError on mismatch; results are checked for non-finite values.
namespace edic::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double exponent);
Tensor clamp_min(const Tensor& x, double floor);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// Channels [begin, end) of a [B,C,...] tensor.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
// Concatenation along axis 1; all other extents must agree.
Tensor concat_channels(const std::vector<Tensor>& parts);
// [B,C,H,W] -> [C,1,B*H*W] and back.
Tensor channels_to_rows(const Tensor& x);
Tensor rows_to_channels(const Tensor& x, const Shape& nchw);

// x:[B,C,H,W] * s:[B,C] broadcast over space.
Tensor scale_channels(const Tensor& x, const Tensor& s);
// x:[G,R,L] op b:[G,R,1] broadcast along the last axis.
Tensor add_broadcast_last(const Tensor& x, const Tensor& b);
Tensor mul_broadcast_last(const Tensor& x, const Tensor& b);
// a:[G,R,K] x b:[G,K,L] -> [G,R,L].
Tensor batched_matmul(const Tensor& a, const Tensor& b);

/// kernel [Cout, Cin, k, k]; bias [Cout] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t pad);
/// kernel [Cin, Cout, k, k]. Output extent is
/// (I - 1) * stride - 2 * pad + k + output_pad, the exact inverse of the
/// conv2d shape map when output_pad < stride.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::size_t stride, std::size_t pad,
                        std::size_t output_pad = 0);
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                            std::size_t pad);

// [B,C,H,W] -> [B,C]
Tensor global_avg_pool(const Tensor& x);
// 2x2 mean pooling with stride 2; odd trailing rows/columns are dropped.
Tensor avg_pool2x2(const Tensor& x);
// input [B,Cin], weight [Cout,Cin], bias [Cout] or undefined.
Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const Tensor& bias);

/// Effective (already positive) divisive normalization parameters.
struct GdnParams {
  Tensor beta;   // [C], > 0
  Tensor gamma;  // [C, C], >= 0
  bool inverse = false;
};

/// y_c = x_c / sqrt(beta_c + sum_j gamma_cj x_j^2); the inverse form
/// multiplies by the same root.
Tensor gdn(const Tensor& x, const GdnParams& params);

}  // namespace edic::ops
