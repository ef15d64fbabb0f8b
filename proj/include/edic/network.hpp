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
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edic/tensor.hpp"

namespace edic {

/// Architecture hyper-parameters.
struct ModelConfig {
  std::size_t N = 32;   // intermediate channels
  std::size_t M = 48;   // latent channels
  std::size_t F = 2;    // Gaussian components; 1 selects the single-Gaussian model
  std::size_t r = 16;   // attention reduction ratio
  std::size_t enh_channels = 32;
  std::size_t enh_blocks = 3;
  std::size_t res_per_block = 3;
  bool use_attention = true;
  bool use_enhancement = true;

  static ModelConfig full_scale();
  static ModelConfig desk_scale();

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Learned parameters by layer path, e.g. "encoder.conv1.kernel".
class ModelWeights {
 public:
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  void set(const std::string& name, Tensor value);
  std::size_t size() const { return tensors_.size(); }
  std::vector<std::string> names() const;
  // Trainable entries, i.e. everything outside the "meta." namespace.
  std::vector<Tensor> parameters() const;
  const std::map<std::string, Tensor>& entries() const { return tensors_; }

  ModelWeights clone() const;

 private:
  std::map<std::string, Tensor> tensors_;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { kFanInUniform, kZero, kGdnBeta, kGdnGamma, kPriorMatrix,
                    kPriorBias, kPriorFactor } init;
  double fan_in = 1.0;
};

/// Every parameter the configuration requires, in a fixed order.
std::vector<ParamSpec> parameter_specs(const ModelConfig& config);

/// Seeded initialization: fan-in scaled uniform for convolutions; zeros for
/// biases, the attention fully-connected layers and the final enhancement
/// convolution. Parameters are returned with requires_grad set.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

/// Throws ConfigError unless the weights hold exactly the required names with
/// matching shapes (extra "meta." entries are allowed).
void validate_weights(const ModelConfig& config, const ModelWeights& weights);

/// Stores the configuration in weights under "meta.config".
void embed_config(const ModelConfig& config, ModelWeights& weights);
ModelConfig extract_config(const ModelWeights& weights);

/// Floor added to the squared GDN beta surrogate.
inline constexpr double kGdnBetaFloor = 1e-6;
/// Minimum Gaussian scale.
inline constexpr double kScaleFloor = 1e-3;

/// Squeeze-and-excitation style channel attention with a residual path:
/// s = sigmoid(w2 relu(w1 gap(X))), output = X + X * s.
Tensor attention_forward(const Tensor& x, const Tensor& w1, const Tensor& w2);

Tensor gdn_layer(const Tensor& x, const ModelWeights& w, const std::string& prefix,
                 bool inverse);

/// x [B,3,H,W] -> y [B,M,ceil(H/16),ceil(W/16)].
Tensor encode_analysis(const Tensor& x, const ModelWeights& w,
                       const ModelConfig& config);
/// y_hat -> x_hat_pre [B,3,height,width]; height/width must be reachable
/// from the latent grid by four stride-2 upsamplings.
Tensor decode_synthesis(const Tensor& y_hat, const ModelWeights& w,
                        const ModelConfig& config, std::size_t height,
                        std::size_t width);
Tensor hyper_encode(const Tensor& y, const ModelWeights& w,
                    const ModelConfig& config);
/// Hyper-decoder output aligned with the latent grid [latent_h, latent_w].
Tensor hyper_decode(const Tensor& z_hat, const ModelWeights& w,
                    const ModelConfig& config, std::size_t latent_h,
                    std::size_t latent_w);

/// Mixture parameters for every latent element, channel-major per component:
/// channel f*M + m of each tensor belongs to component f of latent channel m.
struct GmmTensors {
  Tensor means;    // [B, F*M, h, w]
  Tensor scales;   // [B, F*M, h, w], >= kScaleFloor
  Tensor weights;  // [B, F*M, h, w], sum over f equals 1
  std::size_t F = 1;
};

/// Three 1x1 convolutions with two LeakyReLUs, emitting K = 5M channels for
/// F = 2 (sigmoid weight w and 1 - w) or K = 3FM for F >= 3 (softmax over
/// components). ConfigError for F < 2.
GmmTensors gmm_head(const Tensor& phi, const ModelWeights& w,
                    const ModelConfig& config);
/// Raw head output before the parameter split.
Tensor gmm_head_raw(const Tensor& phi, const ModelWeights& w,
                    const ModelConfig& config);
/// Entropy parameters for either model family: F = 1 splits the 2M
/// hyper-decoder channels into means and scales directly.
GmmTensors entropy_parameters(const Tensor& phi, const ModelWeights& w,
                              const ModelConfig& config);

/// x_hat = x_hat_pre + residual_net(x_hat_pre); identity when disabled.
Tensor enhance(const Tensor& x_hat_pre, const ModelWeights& w,
               const ModelConfig& config);
/// The learned residual alone.
Tensor enhancement_residual(const Tensor& x_hat_pre, const ModelWeights& w,
                            const ModelConfig& config);

}  // namespace edic
