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

#include "edic/codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "edic/error.hpp"

namespace edic {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

std::size_t mirror(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

void check_image(const Tensor& image) {
  if (!image.defined() || image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3 ||
      image.dim(2) == 0 || image.dim(3) == 0) {
    throw ConfigError("codec expects a non-empty [1,3,H,W] image");
  }
}

void check_header(const Bitstream& bs, const ModelConfig& config) {
  if (bs.width == 0 || bs.height == 0) throw FormatError("bitstream has an empty image");
  if (bs.N != config.N || bs.M != config.M || bs.F != config.F) {
    throw ModelError("bitstream was coded with N=" + std::to_string(bs.N) +
                     " M=" + std::to_string(bs.M) + " F=" + std::to_string(bs.F) +
                     ", weights have N=" + std::to_string(config.N) +
                     " M=" + std::to_string(config.M) + " F=" + std::to_string(config.F));
  }
}

struct ZCoding {
  std::vector<CdfTable> tables;
  std::vector<std::size_t> refs;
};

ZCoding z_coding(const FactorizedPrior& prior, const Shape& z_shape) {
  ZCoding out;
  const std::size_t C = z_shape[1], P = z_shape[2] * z_shape[3];
  out.tables.reserve(C);
  for (std::size_t c = 0; c < C; ++c) out.tables.push_back(factorized_cdf_table(prior, c));
  out.refs.reserve(C * P);
  for (std::size_t c = 0; c < C; ++c) out.refs.insert(out.refs.end(), P, c);
  return out;
}

std::vector<long> to_symbols(const Tensor& t) {
  std::vector<long> s(t.numel());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::lround(t.data()[i]);
  return s;
}

Tensor from_symbols(const std::vector<long>& s, Shape shape) {
  std::vector<double> v(s.begin(), s.end());
  return Tensor(std::move(shape), std::move(v));
}

std::vector<std::size_t> identity_refs(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

}  // namespace

double EncodeResult::bpp() const {
  return 8.0 * static_cast<double>(bitstream.payload_bytes()) /
         (static_cast<double>(bitstream.width) * bitstream.height);
}

double EncodeResult::estimated_bpp() const {
  return (estimated_bits_y + estimated_bits_z) /
         (static_cast<double>(bitstream.width) * bitstream.height);
}

Tensor reflect_pad(const Tensor& image, std::size_t height, std::size_t width) {
  const std::size_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (height < H || width < W) throw ConfigError("reflect_pad: target smaller than input");
  std::vector<double> out(B * C * height * width);
  for (std::size_t g = 0; g < B * C; ++g) {
    for (std::size_t i = 0; i < height; ++i) {
      const std::size_t si = mirror(i, H);
      for (std::size_t j = 0; j < width; ++j) {
        out[(g * height + i) * width + j] = image.data()[(g * H + si) * W + mirror(j, W)];
      }
    }
  }
  return Tensor({B, C, height, width}, std::move(out));
}

Tensor crop(const Tensor& image, std::size_t height, std::size_t width) {
  const std::size_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (height > H || width > W) throw ConfigError("crop: target larger than input");
  std::vector<double> out(B * C * height * width);
  for (std::size_t g = 0; g < B * C; ++g)
    for (std::size_t i = 0; i < height; ++i)
      std::copy_n(image.data().begin() + static_cast<std::ptrdiff_t>((g * H + i) * W), width,
                  out.begin() + static_cast<std::ptrdiff_t>((g * height + i) * width));
  return Tensor({B, C, height, width}, std::move(out));
}

Tensor round_latents(const Tensor& y) {
  std::vector<double> v(y.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::round(y.data()[i]);
  return Tensor(y.shape(), std::move(v));
}

Tensor synthesize(const Tensor& y_hat, const ModelWeights& weights,
                  const ModelConfig& config, std::size_t padded_h, std::size_t padded_w,
                  std::size_t height, std::size_t width) {
  NoGradGuard guard;
  const Tensor pre = decode_synthesis(y_hat, weights, config, padded_h, padded_w);
  const Tensor x = crop(enhance(pre, weights, config), height, width);
  std::vector<double> v(x.data().begin(), x.data().end());
  for (double& p : v) p = std::clamp(p, 0.0, 1.0);
  return Tensor(x.shape(), std::move(v));
}

EncodeResult encode_image(const Tensor& image, const ModelWeights& weights,
                          const ModelConfig& config, unsigned threads) {
  check_image(image);
  config.validate();
  NoGradGuard guard;
  const std::size_t H = image.dim(2), W = image.dim(3);
  const std::size_t PH = round_up(H, kCodecBlock), PW = round_up(W, kCodecBlock);
  const Tensor x = reflect_pad(image, PH, PW);

  EncodeResult r;
  const Tensor y = encode_analysis(x, weights, config);
  r.y_hat = round_latents(y);
  r.z_hat = round_latents(hyper_encode(y, weights, config));

  const FactorizedPrior prior(weights, config.N);
  const ZCoding zc = z_coding(prior, r.z_hat.shape());
  const SymbolStream zs{to_symbols(r.z_hat), zc.refs};
  r.bitstream.z_payload = range_encode(zs, zc.tables);
  r.table_cost_z = table_cost(zs, zc.tables);
  r.estimated_bits_z = factorized_bits(r.z_hat, prior);

  const Tensor phi = hyper_decode(r.z_hat, weights, config, y.dim(2), y.dim(3));
  r.params = entropy_parameters(phi, weights, config);
  const std::vector<CdfTable> ytables =
      gmm_cdf_tables(all_element_params(r.params), threads);
  const SymbolStream ys{to_symbols(r.y_hat), identity_refs(ytables.size())};
  r.bitstream.y_payload = range_encode(ys, ytables);
  r.table_cost_y = table_cost(ys, ytables);
  r.estimated_bits_y = estimate_bits(r.y_hat, r.params);

  r.bitstream.width = static_cast<std::uint32_t>(W);
  r.bitstream.height = static_cast<std::uint32_t>(H);
  r.bitstream.N = static_cast<std::uint16_t>(config.N);
  r.bitstream.M = static_cast<std::uint16_t>(config.M);
  r.bitstream.F = static_cast<std::uint16_t>(config.F);
  r.reconstruction = synthesize(r.y_hat, weights, config, PH, PW, H, W);
  return r;
}

Tensor decode_image(const Bitstream& bs, const ModelWeights& weights,
                    const ModelConfig& config, unsigned threads) {
  check_header(bs, config);
  config.validate();
  NoGradGuard guard;
  const std::size_t H = bs.height, W = bs.width;
  const std::size_t PH = round_up(H, kCodecBlock), PW = round_up(W, kCodecBlock);
  const std::size_t yh = PH / 16, yw = PW / 16;
  const Shape z_shape{1, config.N, PH / kCodecBlock, PW / kCodecBlock};

  const FactorizedPrior prior(weights, config.N);
  const ZCoding zc = z_coding(prior, z_shape);
  const Tensor z_hat = from_symbols(range_decode(bs.z_payload, zc.tables, zc.refs), z_shape);

  const Tensor phi = hyper_decode(z_hat, weights, config, yh, yw);
  const GmmTensors params = entropy_parameters(phi, weights, config);
  const std::vector<CdfTable> ytables = gmm_cdf_tables(all_element_params(params), threads);
  const Tensor y_hat =
      from_symbols(range_decode(bs.y_payload, ytables, identity_refs(ytables.size())),
                   {1, config.M, yh, yw});
  return synthesize(y_hat, weights, config, PH, PW, H, W);
}

}  // namespace edic
