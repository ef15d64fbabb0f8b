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

#include "edic/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "edic/bitstream.hpp"
#include "edic/codec.hpp"
#include "edic/entropy.hpp"
#include "edic/error.hpp"
#include "edic/ops.hpp"

namespace edic {

Distortion parse_distortion(const std::string& name) {
  if (name == "mse") return Distortion::kMse;
  if (name == "ms_ssim" || name == "ms-ssim") return Distortion::kMsSsim;
  throw ConfigError("unknown distortion metric '" + name + "' (mse | ms_ssim)");
}

std::string distortion_name(Distortion d) { return d == Distortion::kMse ? "mse" : "ms_ssim"; }

void TrainConfig::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be > 0");
  if (crop_size == 0 || crop_size % kCodecBlock != 0) {
    throw ConfigError("crop size must be a positive multiple of 64");
  }
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(lr_phase1 > 0) || !(lr_phase2 > 0)) throw ConfigError("learning rates must be > 0");
  if (ms_ssim_scales < 1 || ms_ssim_scales > 5) throw ConfigError("ms_ssim scales in [1,5]");
  if (!(clip_grad_norm >= 0) || !std::isfinite(clip_grad_norm)) {
    throw ConfigError("gradient clip must be finite and >= 0");
  }
}

Tensor quantize_train(const Tensor& y, Rng& rng) {
  std::vector<double> u(y.numel());
  for (double& v : u) v = rng.uniform() - 0.5;
  return ops::add(y, Tensor(y.shape(), std::move(u)));
}

Tensor quantize_infer(const Tensor& y) { return round_latents(y); }

ForwardPass forward_relaxed(const Tensor& x, const ModelWeights& weights,
                            const ModelConfig& config, Rng& rng) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ConfigError("training input must be [B,3,H,W]");
  ForwardPass f;
  f.y = encode_analysis(x, weights, config);
  f.z = hyper_encode(f.y, weights, config);
  f.y_tilde = quantize_train(f.y, rng);
  f.z_tilde = quantize_train(f.z, rng);
  const FactorizedPrior prior(weights, config.N);
  f.likelihood_z = prior.likelihood(f.z_tilde);
  const Tensor phi = hyper_decode(f.z_tilde, weights, config, f.y.dim(2), f.y.dim(3));
  f.params = entropy_parameters(phi, weights, config);
  f.likelihood_y = gmm_likelihood(f.y_tilde, f.params);
  f.bits_y = bits_from_likelihood(f.likelihood_y);
  f.bits_z = bits_from_likelihood(f.likelihood_z);
  f.x_hat = enhance(decode_synthesis(f.y_tilde, weights, config, x.dim(2), x.dim(3)),
                    weights, config);
  return f;
}

Tensor rd_loss(const Tensor& x, const Tensor& x_hat, const Tensor& bits_y,
               const Tensor& bits_z, double lambda, Distortion metric,
               std::size_t ms_ssim_scales) {
  if (x.shape() != x_hat.shape() || x.rank() != 4) {
    throw ConfigError("rd_loss: image shapes differ");
  }
  const double pixels = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
  const Tensor d = metric == Distortion::kMse
                       ? ops::mean(ops::square(ops::sub(x_hat, x)))
                       : ops::add_scalar(ops::neg(ms_ssim_tensor(x, x_hat, ms_ssim_scales)), 1.0);
  const Tensor rate = ops::mul_scalar(ops::add(bits_y, bits_z), 1.0 / pixels);
  return ops::add(ops::mul_scalar(d, lambda), rate);
}

// ---------------------------------------------------------------------------

double grad_norm(const ModelWeights& weights) {
  double acc = 0.0;
  for (const auto& [name, tensor] : weights.entries()) {
    if (!tensor.requires_grad() || !tensor.has_grad()) continue;
    for (double g : tensor.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

void Adam::step(ModelWeights& weights, double lr, double grad_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (const auto& [name, tensor] : weights.entries()) {
    if (!tensor.requires_grad() || !tensor.has_grad()) continue;
    Tensor p = tensor;
    std::vector<double> g(p.grad().begin(), p.grad().end());
    for (double& x : g) x *= grad_scale;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1 - kBeta2) * g[i] * g[i];
      data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
    p.zero_grad();
  }
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> s;
  s.emplace("adam.step", Tensor({1}, {static_cast<double>(t_)}));
  for (const auto& [name, m] : m_) {
    s.emplace("adam.m." + name, Tensor({m.size()}, m));
    s.emplace("adam.v." + name, Tensor({m.size()}, v_.at(name)));
  }
  return s;
}

void Adam::load_state(const std::map<std::string, Tensor>& state) {
  m_.clear();
  v_.clear();
  const auto it = state.find("adam.step");
  if (it == state.end()) throw FormatError("optimizer state: missing adam.step");
  t_ = static_cast<std::uint64_t>(it->second.item());
  for (const auto& [key, t] : state) {
    const auto vec = std::vector<double>(t.data().begin(), t.data().end());
    if (key.rfind("adam.m.", 0) == 0) m_[key.substr(7)] = vec;
    if (key.rfind("adam.v.", 0) == 0) v_[key.substr(7)] = vec;
  }
}

// ---------------------------------------------------------------------------

std::vector<Tensor> synthetic_dataset(std::size_t count, std::size_t size,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  out.reserve(count);
  const double n = static_cast<double>(size);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> img(3 * size * size);
    // Smooth two-color gradient along a random direction.
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
      c0[c] = rng.uniform();
      c1[c] = rng.uniform();
    }
    const double angle = rng.uniform(0, 2 * M_PI);
    const double dx = std::cos(angle), dy = std::sin(angle);
    // Oriented stripes.
    const double freq = rng.uniform(2, 24) * 2 * M_PI / n;
    const double sangle = rng.uniform(0, M_PI);
    const double sx = std::cos(sangle), sy = std::sin(sangle);
    const double samp = rng.uniform(0, 0.25);
    const bool checker = rng.uniform() < 0.3;
    const double cell = rng.uniform(8, 40);
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const double u = std::clamp(0.5 + ((j / n - 0.5) * dx + (i / n - 0.5) * dy), 0.0, 1.0);
        double tex = samp * std::sin(freq * (sx * j + sy * i));
        if (checker) {
          const bool on = (static_cast<long>(i / cell) + static_cast<long>(j / cell)) % 2 == 0;
          tex += on ? 0.1 : -0.1;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          img[(c * size + i) * size + j] = c0[c] + (c1[c] - c0[c]) * u + tex;
        }
      }
    }
    // Flat shapes with sharp edges.
    const std::size_t shapes = 2 + rng.below(6);
    for (std::size_t s = 0; s < shapes; ++s) {
      double col[3];
      for (double& c : col) c = rng.uniform();
      const double cx = rng.uniform(0, n), cy = rng.uniform(0, n);
      const double rx = rng.uniform(n / 20, n / 4), ry = rng.uniform(n / 20, n / 4);
      const bool ellipse = rng.uniform() < 0.5;
      for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
          const double ex = (j - cx) / rx, ey = (i - cy) / ry;
          const bool inside = ellipse ? ex * ex + ey * ey <= 1.0
                                      : std::abs(ex) <= 1.0 && std::abs(ey) <= 1.0;
          if (!inside) continue;
          for (std::size_t c = 0; c < 3; ++c) img[(c * size + i) * size + j] = col[c];
        }
      }
    }
    const double noise = rng.uniform(0, 0.04);
    for (double& v : img) v = std::clamp(v + noise * (rng.uniform() - 0.5), 0.0, 1.0);
    out.push_back(quantize_pixels(Tensor({1, 3, size, size}, std::move(img))));
  }
  return out;
}

std::vector<Tensor> load_image_folder(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor> out;
  for (const auto& f : files) out.push_back(read_image(f));
  return out;
}

Tensor sample_batch(const std::vector<Tensor>& images, std::size_t batch,
                    std::size_t crop, Rng& rng) {
  if (images.empty()) throw ConfigError("empty dataset");
  std::vector<double> out(batch * 3 * crop * crop);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor img = images[rng.below(images.size())];
    if (img.dim(2) < crop || img.dim(3) < crop) {
      img = reflect_pad(img, std::max(crop, img.dim(2)), std::max(crop, img.dim(3)));
    }
    const std::size_t H = img.dim(2), W = img.dim(3);
    const std::size_t oi = rng.below(H - crop + 1), oj = rng.below(W - crop + 1);
    const bool flip = rng.uniform() < 0.5;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < crop; ++i)
        for (std::size_t j = 0; j < crop; ++j) {
          const std::size_t sj = flip ? crop - 1 - j : j;
          out[((b * 3 + c) * crop + i) * crop + j] =
              img.data()[(c * H + oi + i) * W + oj + sj];
        }
  }
  return Tensor({batch, 3, crop, crop}, std::move(out));
}

// ---------------------------------------------------------------------------

double evaluate_loss(const ModelWeights& weights, const ModelConfig& model,
                     const Tensor& batch, double lambda, Distortion metric,
                     std::uint64_t noise_seed, std::size_t ms_ssim_scales) {
  NoGradGuard guard;
  Rng rng(noise_seed);
  const ForwardPass f = forward_relaxed(batch, weights, model, rng);
  return rd_loss(batch, f.x_hat, f.bits_y, f.bits_z, lambda, metric, ms_ssim_scales).item();
}

RDPoint held_out_point(const ModelWeights& weights, const ModelConfig& model,
                       const Tensor& image, double lambda) {
  const EncodeResult enc = encode_image(image, weights, model);
  RDPoint p;
  p.bpp = enc.bpp();
  p.psnr_db = psnr(image, enc.reconstruction);
  p.ms_ssim = ms_ssim(image, enc.reconstruction);
  p.lambda = lambda;
  return p;
}

TrainResult train(const std::vector<Tensor>& dataset, const ModelConfig& model,
                  const TrainConfig& config, std::optional<ModelWeights> initial,
                  const Tensor& held_out, const TrainCallback& on_log) {
  model.validate();
  config.validate();
  TrainResult result;
  if (initial) {
    validate_weights(model, *initial);
    result.weights = initial->clone();
  } else {
    result.weights = init_weights(model, config.seed);
  }
  embed_config(model, result.weights);
  Rng data_rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  Rng noise_rng(config.seed ^ 0xD1B54A32D192ED03ull);
  ModelWeights last_good = result.weights.clone();
  const std::size_t total = config.steps_phase1 + config.steps_phase2;

  for (std::size_t step = 0; step < total; ++step) {
    const Tensor batch = sample_batch(dataset, config.batch_size, config.crop_size, data_rng);
    Tensor loss;
    ForwardPass f;
    try {
      f = forward_relaxed(batch, result.weights, model, noise_rng);
      loss = rd_loss(batch, f.x_hat, f.bits_y, f.bits_z, config.lambda, config.metric,
                     config.ms_ssim_scales);
    } catch (const NumericError& e) {
      if (config.checkpoint) write_checkpoint(*config.checkpoint, last_good, result.optimizer);
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss.item())) {
      if (config.checkpoint) write_checkpoint(*config.checkpoint, last_good, result.optimizer);
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    if (step % config.log_every == 0 || step + 1 == total) {
      LogRow row;
      row.step = step;
      row.loss = loss.item();
      const double pixels =
          static_cast<double>(batch.dim(0) * batch.dim(2) * batch.dim(3));
      row.bpp_est = (f.bits_y.item() + f.bits_z.item()) / pixels;
      row.psnr = psnr(batch, f.x_hat.detach());
      result.log.push_back(row);
      if (on_log) on_log(row);
    }
    backward(loss);
    f = ForwardPass();
    loss = Tensor();
    const double lr = step < config.steps_phase1 ? config.lr_phase1 : config.lr_phase2;
    if (config.checkpoint) last_good = result.weights.clone();
    const double norm = config.clip_grad_norm > 0 ? grad_norm(result.weights) : 0.0;
    if (!std::isfinite(norm)) {
      if (config.checkpoint) write_checkpoint(*config.checkpoint, last_good, result.optimizer);
      throw NumericError("non-finite gradient at step " + std::to_string(step));
    }
    result.optimizer.step(result.weights, lr,
                          norm > config.clip_grad_norm ? config.clip_grad_norm / norm : 1.0);
    if (held_out.defined() && config.eval_every > 0 && (step + 1) % config.eval_every == 0) {
      result.rd_points.emplace_back(step + 1,
                                    held_out_point(result.weights, model, held_out, config.lambda));
    }
  }
  if (held_out.defined() && (result.rd_points.empty() || result.rd_points.back().first != total)) {
    result.rd_points.emplace_back(total,
                                  held_out_point(result.weights, model, held_out, config.lambda));
  }
  return result;
}

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss,bpp_est,psnr\n";
  out.precision(10);
  for (const auto& r : log) {
    out << r.step << ',' << r.loss << ',' << r.bpp_est << ',' << r.psnr << '\n';
  }
}

void write_checkpoint(const std::filesystem::path& path, const ModelWeights& weights,
                      const Adam& optimizer) {
  write_weights(path, weights);
  std::filesystem::path side = path;
  side += ".adam";
  write_file(side, serialize_tensors(optimizer.state()));
}

ModelWeights read_checkpoint(const std::filesystem::path& path, Adam& optimizer) {
  std::filesystem::path side = path;
  side += ".adam";
  optimizer.load_state(parse_tensors(read_file(side)));
  return read_weights(path);
}

}  // namespace edic
