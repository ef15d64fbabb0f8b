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

#include "edic/network.hpp"

#include <cmath>
#include <set>

#include "edic/error.hpp"
#include "edic/ops.hpp"
#include "edic/random.hpp"

namespace edic {

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.N = 320;
  c.M = 480;
  return c;
}

ModelConfig ModelConfig::desk_scale() { return ModelConfig{}; }

void ModelConfig::validate() const {
  if (N == 0 || M == 0 || F == 0) throw ConfigError("N, M and F must be >= 1");
  if (use_attention) {
    if (r == 0) throw ConfigError("attention reduction ratio must be >= 1");
    for (std::size_t c : {N, M}) {
      if (c % r != 0 || c / r == 0) {
        throw ConfigError("attention ratio r=" + std::to_string(r) +
                          " does not divide " + std::to_string(c) + " channels");
      }
    }
  }
  if (use_enhancement && (enh_channels == 0 || enh_blocks == 0)) {
    throw ConfigError("enhancement needs channels and at least one block");
  }
}

const Tensor& ModelWeights::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing weight '" + name + "'");
  return it->second;
}

bool ModelWeights::contains(const std::string& name) const {
  return tensors_.count(name) != 0;
}

void ModelWeights::set(const std::string& name, Tensor value) {
  tensors_[name] = std::move(value);
}

std::vector<std::string> ModelWeights::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

std::vector<Tensor> ModelWeights::parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : tensors_) {
    if (name.rfind("meta.", 0) != 0) out.push_back(t);
  }
  return out;
}

ModelWeights ModelWeights::clone() const {
  ModelWeights out;
  for (const auto& [name, t] : tensors_) out.set(name, t.clone());
  return out;
}

namespace {

using Init = ParamSpec::Init;

void add_conv(std::vector<ParamSpec>& specs, const std::string& prefix,
              std::size_t out, std::size_t in, std::size_t k, bool transpose,
              bool zero = false) {
  const Shape shape = transpose ? Shape{in, out, k, k} : Shape{out, in, k, k};
  // Transposed kernels use the output-side fan, as the common frameworks do.
  const double fan = static_cast<double>((transpose ? out : in) * k * k);
  specs.push_back({prefix + ".kernel", shape,
                   zero ? Init::kZero : Init::kFanInUniform, fan});
  specs.push_back({prefix + ".bias", {out}, Init::kZero, 1.0});
}

void add_gdn(std::vector<ParamSpec>& specs, const std::string& prefix,
             std::size_t c) {
  specs.push_back({prefix + ".beta", {c}, Init::kGdnBeta, 1.0});
  specs.push_back({prefix + ".gamma", {c, c}, Init::kGdnGamma, 1.0});
}

void add_attention(std::vector<ParamSpec>& specs, const std::string& prefix,
                   std::size_t c, std::size_t r) {
  specs.push_back({prefix + ".w1", {c / r, c}, Init::kZero, 1.0});
  specs.push_back({prefix + ".w2", {c, c / r}, Init::kZero, 1.0});
}

constexpr std::size_t kPriorWidths[] = {1, 3, 3, 3, 1};
constexpr double kPriorInitScale = 10.0;
constexpr double kFanInGain = 3.0;  // variance-preserving uniform bound
constexpr double kPriorBiasRange = 0.05;

}  // namespace

std::vector<ParamSpec> parameter_specs(const ModelConfig& config) {
  config.validate();
  const std::size_t N = config.N, M = config.M;
  std::vector<ParamSpec> specs;

  add_conv(specs, "encoder.conv1", N, 3, 5, false);
  add_gdn(specs, "encoder.gdn1", N);
  add_conv(specs, "encoder.conv2", N, N, 5, false);
  add_gdn(specs, "encoder.gdn2", N);
  if (config.use_attention) add_attention(specs, "encoder.att1", N, config.r);
  add_conv(specs, "encoder.conv3", N, N, 5, false);
  add_gdn(specs, "encoder.gdn3", N);
  add_conv(specs, "encoder.conv4", M, N, 5, false);
  if (config.use_attention) add_attention(specs, "encoder.att2", M, config.r);

  add_conv(specs, "decoder.deconv1", N, M, 5, true);
  add_gdn(specs, "decoder.igdn1", N);
  add_conv(specs, "decoder.deconv2", N, N, 5, true);
  add_gdn(specs, "decoder.igdn2", N);
  add_conv(specs, "decoder.deconv3", N, N, 5, true);
  add_gdn(specs, "decoder.igdn3", N);
  add_conv(specs, "decoder.deconv4", 3, N, 5, true);

  add_conv(specs, "hyper_encoder.conv1", N, M, 3, false);
  add_conv(specs, "hyper_encoder.conv2", N, N, 5, false);
  add_conv(specs, "hyper_encoder.conv3", N, N, 5, false);
  if (config.use_attention) add_attention(specs, "hyper_encoder.att", N, config.r);

  add_conv(specs, "hyper_decoder.deconv1", N, N, 5, true);
  add_conv(specs, "hyper_decoder.deconv2", N, N, 5, true);
  add_conv(specs, "hyper_decoder.conv3", config.F == 1 ? 2 * M : M, N, 3, false);

  if (config.F >= 2) {
    const std::size_t K = config.F == 2 ? 5 * M : 3 * config.F * M;
    add_conv(specs, "gmm_head.conv1", N, M, 1, false);
    add_conv(specs, "gmm_head.conv2", N, N, 1, false);
    add_conv(specs, "gmm_head.conv3", K, N, 1, false);
  }

  if (config.use_enhancement) {
    const std::size_t E = config.enh_channels;
    add_conv(specs, "enhance.conv_in", E, 3, 3, false);
    for (std::size_t b = 0; b < config.enh_blocks; ++b) {
      for (std::size_t r = 0; r < config.res_per_block; ++r) {
        const std::string p = "enhance.block" + std::to_string(b + 1) + ".rb" +
                              std::to_string(r + 1);
        add_conv(specs, p + ".conv1", E, E, 3, false);
        add_conv(specs, p + ".conv2", E, E, 3, false, /*zero=*/true);
      }
    }
    add_conv(specs, "enhance.conv_out", 3, E, 3, false, /*zero=*/true);
  }

  const std::size_t stages = std::size(kPriorWidths) - 1;
  for (std::size_t k = 0; k < stages; ++k) {
    const std::size_t in = kPriorWidths[k], out = kPriorWidths[k + 1];
    const std::string p = "prior.stage" + std::to_string(k + 1);
    specs.push_back({p + ".matrix", {N, out, in}, Init::kPriorMatrix,
                     static_cast<double>(out)});
    specs.push_back({p + ".bias", {N, out, 1}, Init::kPriorBias, 1.0});
    if (k + 1 < stages) {
      specs.push_back({p + ".factor", {N, out, 1}, Init::kPriorFactor, 1.0});
    }
  }
  return specs;
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ModelWeights weights;
  const double prior_scale =
      std::pow(kPriorInitScale, 1.0 / static_cast<double>(std::size(kPriorWidths) - 1));
  for (const ParamSpec& spec : parameter_specs(config)) {
    std::vector<double> v(shape_numel(spec.shape), 0.0);
    switch (spec.init) {
      case Init::kFanInUniform: {
        const double bound = std::sqrt(kFanInGain / spec.fan_in);
        for (double& x : v) x = rng.uniform(-bound, bound);
        break;
      }
      case Init::kZero:
      case Init::kPriorFactor:
        break;
      case Init::kGdnBeta:
        for (double& x : v) x = std::sqrt(1.0 - kGdnBetaFloor);
        break;
      case Init::kGdnGamma: {
        // Effective gamma = surrogate^2: 0.1 on the diagonal, 1e-4 elsewhere.
        const std::size_t c = spec.shape[0];
        for (std::size_t i = 0; i < c; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            v[i * c + j] = i == j ? std::sqrt(0.1) : 0.01;
          }
        }
        break;
      }
      case Init::kPriorMatrix: {
        // softplus(x) = 1 / (scale * width)
        const double target = 1.0 / (prior_scale * spec.fan_in);
        for (double& x : v) x = std::log(std::expm1(target));
        break;
      }
      case Init::kPriorBias:
        for (double& x : v) x = rng.uniform(-kPriorBiasRange, kPriorBiasRange);
        break;
    }
    weights.set(spec.name, Tensor(spec.shape, std::move(v), true));
  }
  embed_config(config, weights);
  return weights;
}

void validate_weights(const ModelConfig& config, const ModelWeights& weights) {
  std::set<std::string> required;
  for (const ParamSpec& spec : parameter_specs(config)) {
    required.insert(spec.name);
    if (!weights.contains(spec.name)) {
      throw ConfigError("missing weight '" + spec.name + "'");
    }
    const Tensor& t = weights.at(spec.name);
    if (t.shape() != spec.shape) {
      throw ConfigError("weight '" + spec.name + "' has shape " +
                        shape_str(t.shape()) + ", expected " +
                        shape_str(spec.shape));
    }
  }
  for (const std::string& name : weights.names()) {
    if (name.rfind("meta.", 0) == 0) continue;
    if (!required.count(name)) {
      throw ConfigError("unexpected weight '" + name + "'");
    }
  }
}

void embed_config(const ModelConfig& c, ModelWeights& weights) {
  weights.set("meta.config",
              Tensor({9}, {double(c.N), double(c.M), double(c.F), double(c.r),
                           double(c.enh_channels), double(c.enh_blocks),
                           double(c.res_per_block), c.use_attention ? 1.0 : 0.0,
                           c.use_enhancement ? 1.0 : 0.0}));
}

ModelConfig extract_config(const ModelWeights& weights) {
  const Tensor& t = weights.at("meta.config");
  if (t.numel() != 9) throw ConfigError("meta.config must hold 9 values");
  const auto v = t.data();
  const auto count = [&](std::size_t i) {
    if (v[i] < 0 || v[i] != std::floor(v[i])) {
      throw ConfigError("meta.config holds a non-integer field");
    }
    return static_cast<std::size_t>(v[i]);
  };
  ModelConfig c;
  c.N = count(0);
  c.M = count(1);
  c.F = count(2);
  c.r = count(3);
  c.enh_channels = count(4);
  c.enh_blocks = count(5);
  c.res_per_block = count(6);
  c.use_attention = v[7] != 0.0;
  c.use_enhancement = v[8] != 0.0;
  c.validate();
  return c;
}

Tensor attention_forward(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  if (!x.defined() || x.rank() != 4) {
    throw ConfigError("attention: expected a [B,C,H,W] feature map");
  }
  const std::size_t c = x.dim(1);
  if (w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != c || w2.dim(0) != c ||
      w2.dim(1) != w1.dim(0)) {
    throw ConfigError("attention: " + std::to_string(c) + " channels vs w1 " +
                      shape_str(w1.shape()) + ", w2 " + shape_str(w2.shape()));
  }
  const Tensor t = ops::global_avg_pool(x);
  const Tensor s =
      ops::sigmoid(ops::fully_connected(ops::relu(ops::fully_connected(t, w1, {})), w2, {}));
  return ops::add(x, ops::scale_channels(x, s));
}

namespace {

Tensor conv(const Tensor& x, const ModelWeights& w, const std::string& p,
            std::size_t stride, std::size_t pad) {
  return ops::conv2d(x, w.at(p + ".kernel"), w.at(p + ".bias"), stride, pad);
}

// k=5, stride 2, pad 2 upsampling to an explicit target extent.
Tensor deconv(const Tensor& x, const ModelWeights& w, const std::string& p,
              std::size_t target_h, std::size_t target_w) {
  const std::size_t h = x.dim(2), wd = x.dim(3);
  if (target_h + 1 < 2 * h || target_h > 2 * h || target_w + 1 < 2 * wd ||
      target_w > 2 * wd || target_h - (2 * h - 1) != target_w - (2 * wd - 1)) {
    throw ConfigError(p + ": cannot upsample " + std::to_string(h) + "x" +
                      std::to_string(wd) + " to " + std::to_string(target_h) +
                      "x" + std::to_string(target_w));
  }
  return ops::conv2d_transpose(x, w.at(p + ".kernel"), w.at(p + ".bias"), 2, 2,
                               target_h - (2 * h - 1));
}

Tensor attention(const Tensor& x, const ModelWeights& w, const std::string& p) {
  return attention_forward(x, w.at(p + ".w1"), w.at(p + ".w2"));
}

std::size_t half_up(std::size_t v) { return (v + 1) / 2; }

}  // namespace

Tensor gdn_layer(const Tensor& x, const ModelWeights& w, const std::string& p,
                 bool inverse) {
  ops::GdnParams params;
  params.beta = ops::add_scalar(ops::square(w.at(p + ".beta")), kGdnBetaFloor);
  params.gamma = ops::square(w.at(p + ".gamma"));
  params.inverse = inverse;
  try {
    return ops::gdn(x, params);
  } catch (const NumericError&) {
    throw NumericError(p + ": non-finite normalization (beta floor violated?)");
  }
}

Tensor encode_analysis(const Tensor& x, const ModelWeights& w,
                       const ModelConfig& config) {
  if (!x.defined() || x.rank() != 4 || x.dim(1) != 3) {
    throw ConfigError("encoder expects [B,3,H,W] input");
  }
  Tensor h = gdn_layer(conv(x, w, "encoder.conv1", 2, 2), w, "encoder.gdn1", false);
  h = gdn_layer(conv(h, w, "encoder.conv2", 2, 2), w, "encoder.gdn2", false);
  if (config.use_attention) h = attention(h, w, "encoder.att1");
  h = gdn_layer(conv(h, w, "encoder.conv3", 2, 2), w, "encoder.gdn3", false);
  h = conv(h, w, "encoder.conv4", 2, 2);
  if (config.use_attention) h = attention(h, w, "encoder.att2");
  return h;
}

Tensor decode_synthesis(const Tensor& y_hat, const ModelWeights& w,
                        const ModelConfig& config, std::size_t height,
                        std::size_t width) {
  (void)config;
  std::size_t hs[4], ws[4];
  hs[3] = height;
  ws[3] = width;
  for (int i = 2; i >= 0; --i) {
    hs[i] = half_up(hs[i + 1]);
    ws[i] = half_up(ws[i + 1]);
  }
  Tensor h = gdn_layer(deconv(y_hat, w, "decoder.deconv1", hs[0], ws[0]), w,
                       "decoder.igdn1", true);
  h = gdn_layer(deconv(h, w, "decoder.deconv2", hs[1], ws[1]), w, "decoder.igdn2", true);
  h = gdn_layer(deconv(h, w, "decoder.deconv3", hs[2], ws[2]), w, "decoder.igdn3", true);
  return deconv(h, w, "decoder.deconv4", hs[3], ws[3]);
}

Tensor hyper_encode(const Tensor& y, const ModelWeights& w,
                    const ModelConfig& config) {
  Tensor h = ops::relu(conv(y, w, "hyper_encoder.conv1", 1, 1));
  h = ops::relu(conv(h, w, "hyper_encoder.conv2", 2, 2));
  h = conv(h, w, "hyper_encoder.conv3", 2, 2);
  if (config.use_attention) h = attention(h, w, "hyper_encoder.att");
  return h;
}

Tensor hyper_decode(const Tensor& z_hat, const ModelWeights& w,
                    const ModelConfig& config, std::size_t latent_h,
                    std::size_t latent_w) {
  (void)config;
  Tensor h = ops::leaky_relu(deconv(z_hat, w, "hyper_decoder.deconv1",
                                    half_up(latent_h), half_up(latent_w)));
  h = ops::leaky_relu(deconv(h, w, "hyper_decoder.deconv2", latent_h, latent_w));
  return conv(h, w, "hyper_decoder.conv3", 1, 1);
}

Tensor gmm_head_raw(const Tensor& phi, const ModelWeights& w,
                    const ModelConfig& config) {
  if (config.F < 2) {
    throw ConfigError("gmm_head requires F >= 2; F = 1 uses the single-Gaussian path");
  }
  Tensor h = ops::leaky_relu(conv(phi, w, "gmm_head.conv1", 1, 0));
  h = ops::leaky_relu(conv(h, w, "gmm_head.conv2", 1, 0));
  return conv(h, w, "gmm_head.conv3", 1, 0);
}

namespace {

Tensor positive_scale(const Tensor& raw) {
  return ops::add_scalar(ops::softplus(raw), kScaleFloor);
}

}  // namespace

GmmTensors gmm_head(const Tensor& phi, const ModelWeights& w,
                    const ModelConfig& config) {
  const Tensor raw = gmm_head_raw(phi, w, config);
  const std::size_t M = config.M, F = config.F;
  GmmTensors out;
  out.F = F;
  out.means = ops::slice_channels(raw, 0, F * M);
  out.scales = positive_scale(ops::slice_channels(raw, F * M, 2 * F * M));
  if (F == 2) {
    // (w, 1 - w), with 1 - sigmoid(v) evaluated as sigmoid(-v).
    const Tensor logit = ops::slice_channels(raw, 4 * M, 5 * M);
    out.weights = ops::concat_channels({ops::sigmoid(logit), ops::sigmoid(ops::neg(logit))});
  } else {
    const std::size_t B = raw.dim(0), H = raw.dim(2), W = raw.dim(3);
    const Tensor logits = ops::slice_channels(raw, 2 * F * M, 3 * F * M);
    out.weights = ops::reshape(
        ops::softmax(ops::reshape(logits, {B, F, M, H, W}), 1), {B, F * M, H, W});
  }
  return out;
}

GmmTensors entropy_parameters(const Tensor& phi, const ModelWeights& w,
                              const ModelConfig& config) {
  if (config.F >= 2) return gmm_head(phi, w, config);
  const std::size_t M = config.M;
  if (phi.rank() != 4 || phi.dim(1) != 2 * M) {
    throw ConfigError("single-Gaussian parameters expect 2M channels, got " +
                      shape_str(phi.shape()));
  }
  GmmTensors out;
  out.F = 1;
  out.means = ops::slice_channels(phi, 0, M);
  out.scales = positive_scale(ops::slice_channels(phi, M, 2 * M));
  Shape s = phi.shape();
  s[1] = M;
  out.weights = Tensor::full(s, 1.0);
  return out;
}

Tensor enhancement_residual(const Tensor& x_hat_pre, const ModelWeights& w,
                            const ModelConfig& config) {
  if (!config.use_enhancement) {
    return Tensor::zeros(x_hat_pre.shape());
  }
  Tensor h = conv(x_hat_pre, w, "enhance.conv_in", 1, 1);
  for (std::size_t b = 0; b < config.enh_blocks; ++b) {
    const Tensor block_in = h;
    for (std::size_t r = 0; r < config.res_per_block; ++r) {
      const std::string p =
          "enhance.block" + std::to_string(b + 1) + ".rb" + std::to_string(r + 1);
      h = ops::add(h, conv(ops::relu(conv(h, w, p + ".conv1", 1, 1)), w, p + ".conv2", 1, 1));
    }
    h = ops::add(h, block_in);
  }
  return conv(h, w, "enhance.conv_out", 1, 1);
}

Tensor enhance(const Tensor& x_hat_pre, const ModelWeights& w,
               const ModelConfig& config) {
  if (!config.use_enhancement) return x_hat_pre;
  return ops::add(x_hat_pre, enhancement_residual(x_hat_pre, w, config));
}

}  // namespace edic
