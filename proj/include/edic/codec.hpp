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

#include "edic/bitstream.hpp"
#include "edic/entropy.hpp"
#include "edic/network.hpp"
#include "edic/range_coder.hpp"
#include "edic/tensor.hpp"

namespace edic {

/// Spatial granularity of the coder: four stride-2 layers to y, two more to z.
inline constexpr std::size_t kCodecBlock = 64;

/// Encoder output together with everything the encoder knows locally.
struct EncodeResult {
  Bitstream bitstream;
  Tensor reconstruction;  // [1,3,H,W], what decode_image will return
  Tensor y_hat;           // padded latent grid
  Tensor z_hat;
  GmmTensors params;      // entropy parameters of y_hat
  double estimated_bits_y = 0.0;  // model pmf, before table quantization
  double estimated_bits_z = 0.0;
  CodeCost table_cost_y, table_cost_z;

  double bpp() const;            // from the payload length
  double estimated_bpp() const;  // from the entropy estimate
};

/// Codes a [1,3,H,W] image: y and z from the analysis transforms, z_hat with
/// the factorized prior, then y_hat with per-element mixture tables. Inputs
/// are reflect-padded to a multiple of 64; the true size goes in the header.
EncodeResult encode_image(const Tensor& image, const ModelWeights& weights,
                          const ModelConfig& config, unsigned threads = 0);

/// Reconstruction from the bitstream and weights alone. ModelError if the
/// header's N/M/F disagree with the configuration.
Tensor decode_image(const Bitstream& bs, const ModelWeights& weights,
                    const ModelConfig& config, unsigned threads = 0);

/// Reflect-pads the bottom and right edges to the given size.
Tensor reflect_pad(const Tensor& image, std::size_t height, std::size_t width);
/// Top-left crop.
Tensor crop(const Tensor& image, std::size_t height, std::size_t width);

/// Round half away from zero.
Tensor round_latents(const Tensor& y);

/// Shared synthesis path: decoder, enhancement, crop and clamp to [0,1].
Tensor synthesize(const Tensor& y_hat, const ModelWeights& weights,
                  const ModelConfig& config, std::size_t padded_h, std::size_t padded_w,
                  std::size_t height, std::size_t width);

}  // namespace edic
