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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "edic/metrics.hpp"
#include "edic/network.hpp"
#include "edic/random.hpp"
#include "edic/tensor.hpp"

namespace edic {

enum class Distortion { kMse, kMsSsim };

Distortion parse_distortion(const std::string& name);
std::string distortion_name(Distortion d);

inline const std::vector<double> kMseLambdas = {256, 512, 1024, 2048, 4096, 6144, 8192};
inline const std::vector<double> kMsSsimLambdas = {16, 32, 64, 128, 256, 384, 512};
/// Pre-training anchor for fine-tuning to other trade-offs.
inline constexpr double kAnchorLambda = 8192;

struct TrainConfig {
  double lambda = kAnchorLambda;
  Distortion metric = Distortion::kMse;
  std::size_t batch_size = 4;
  std::size_t crop_size = 256;
  double lr_phase1 = 1e-4;
  double lr_phase2 = 1e-5;
  std::size_t steps_phase1 = 2000;
  std::size_t steps_phase2 = 0;
  std::uint64_t seed = 1;
  std::size_t ms_ssim_scales = 3;  // training-time scale count
  std::size_t log_every = 50;
  std::size_t eval_every = 0;      // held-out RD point cadence; 0 = end only
  double clip_grad_norm = 1.0;     // global L2 gradient clip; 0 disables
  std::optional<std::filesystem::path> checkpoint;  // last-good weights on abort

  void validate() const;
};

/// Relaxed forward pass: uniform noise in place of rounding.
struct ForwardPass {
  Tensor y, y_tilde, z, z_tilde;
  GmmTensors params;
  Tensor likelihood_y, likelihood_z;
  Tensor bits_y, bits_z;  // scalars on the tape
  Tensor x_hat;
};

ForwardPass forward_relaxed(const Tensor& x, const ModelWeights& weights,
                            const ModelConfig& config, Rng& rng);

/// L2 norm of all parameter gradients taken together.
double grad_norm(const ModelWeights& weights);

/// y + u with u ~ U[-0.5, 0.5) drawn from rng.
Tensor quantize_train(const Tensor& y, Rng& rng);
/// round(y), halves away from zero.
Tensor quantize_infer(const Tensor& y);

/// lambda * d(x, x_hat) + (bits_y + bits_z) / pixels, where pixels counts
/// B*H*W and d is MSE or 1 - MS-SSIM.
Tensor rd_loss(const Tensor& x, const Tensor& x_hat, const Tensor& bits_y,
               const Tensor& bits_z, double lambda, Distortion metric,
               std::size_t ms_ssim_scales = 3);

/// Adam with beta = (0.9, 0.999), eps = 1e-8.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  /// Updates every parameter that carries a gradient, then clears grads.
  /// Gradients are multiplied by grad_scale first.
  void step(ModelWeights& weights, double lr, double grad_scale = 1.0);
  std::uint64_t steps() const { return t_; }

  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Procedural RGB images: gradients, stripes, checkerboards, shapes, noise.
std::vector<Tensor> synthetic_dataset(std::size_t count, std::size_t size,
                                      std::uint64_t seed);
/// Every PPM/PNG file in a folder, sorted by name.
std::vector<Tensor> load_image_folder(const std::filesystem::path& dir);

/// Random crops with horizontal flips, stacked to [B,3,crop,crop].
Tensor sample_batch(const std::vector<Tensor>& images, std::size_t batch,
                    std::size_t crop, Rng& rng);

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double bpp_est = 0.0;
  double psnr = 0.0;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<LogRow> log;
  std::vector<std::pair<std::size_t, RDPoint>> rd_points;  // (step, held-out point)
  Adam optimizer;
};

using TrainCallback = std::function<void(const LogRow&)>;

/// Trains from `initial` (fresh seeded weights when empty). Throws
/// NumericError on a non-finite loss after writing the last good weights to
/// config.checkpoint when set.
TrainResult train(const std::vector<Tensor>& dataset, const ModelConfig& model,
                  const TrainConfig& config, std::optional<ModelWeights> initial = {},
                  const Tensor& held_out = {}, const TrainCallback& on_log = {});

/// Loss of fixed weights on a batch with a fixed noise draw.
double evaluate_loss(const ModelWeights& weights, const ModelConfig& model,
                     const Tensor& batch, double lambda, Distortion metric,
                     std::uint64_t noise_seed, std::size_t ms_ssim_scales = 3);

/// Real encode/decode of one image.
RDPoint held_out_point(const ModelWeights& weights, const ModelConfig& model,
                       const Tensor& image, double lambda);

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& log);

/// Weights plus "<path>.adam" optimizer state.
void write_checkpoint(const std::filesystem::path& path, const ModelWeights& weights,
                      const Adam& optimizer);
ModelWeights read_checkpoint(const std::filesystem::path& path, Adam& optimizer);

}  // namespace edic
