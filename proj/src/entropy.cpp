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

#include "edic/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "edic/error.hpp"
#include "edic/ops.hpp"

namespace edic {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// Mass of N(0, scale) on [|v| - 0.5, |v| + 0.5], evaluated on the lower tail
// so it keeps relative precision far from the mean.
double component_mass(double v, double scale) {
  const double a = std::abs(v);
  const double upper = normal_cdf((0.5 - a) / scale);
  const double lower = normal_cdf((-0.5 - a) / scale);
  return upper - lower;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double GmmParams::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) m += weights[i] * means[i];
  return m;
}

void GmmParams::validate() const {
  if (weights.empty() || weights.size() != means.size() ||
      weights.size() != scales.size()) {
    throw ModelError("mixture parameter arrays must be non-empty and equal length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || !std::isfinite(means[i]) ||
        !std::isfinite(scales[i])) {
      throw ModelError("non-finite mixture parameter");
    }
    if (weights[i] < 0.0) throw ModelError("negative mixture weight");
    if (scales[i] < kScaleFloor * (1.0 - 1e-12)) {
      throw ModelError("mixture scale " + std::to_string(scales[i]) +
                       " below floor");
    }
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ModelError("mixture weights sum to " + std::to_string(total));
  }
}

double gmm_mass(double center, const GmmParams& params) {
  double p = 0.0;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    if (params.weights[i] == 0.0) continue;
    p += params.weights[i] * component_mass(center - params.means[i], params.scales[i]);
  }
  return p;
}

double gmm_pmf(long k, const GmmParams& params) {
  params.validate();
  return std::max(gmm_mass(static_cast<double>(k), params), kPmfFloor);
}

double gaussian_pmf(long k, double mean, double scale) {
  return gmm_pmf(k, GmmParams{{1.0}, {mean}, {scale}});
}

GmmParams element_params(const GmmTensors& params, std::size_t b, std::size_t m,
                         std::size_t i, std::size_t j) {
  const Shape& s = params.means.shape();
  const std::size_t F = params.F;
  const std::size_t M = s[1] / F, H = s[2], W = s[3];
  GmmParams out;
  out.weights.resize(F);
  out.means.resize(F);
  out.scales.resize(F);
  for (std::size_t f = 0; f < F; ++f) {
    const std::size_t idx = ((b * F * M + f * M + m) * H + i) * W + j;
    out.weights[f] = params.weights.data()[idx];
    out.means[f] = params.means.data()[idx];
    out.scales[f] = params.scales.data()[idx];
  }
  return out;
}

std::vector<GmmParams> all_element_params(const GmmTensors& params) {
  const Shape& s = params.means.shape();
  const std::size_t M = s[1] / params.F;
  std::vector<GmmParams> out;
  out.reserve(s[0] * M * s[2] * s[3]);
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < s[2]; ++i)
        for (std::size_t j = 0; j < s[3]; ++j)
          out.push_back(element_params(params, b, m, i, j));
  return out;
}

namespace {

void check_gmm_shapes(const Tensor& y, const GmmTensors& p) {
  if (!y.defined() || y.rank() != 4 || p.F == 0) {
    throw ConfigError("gmm: latent must be [B,M,h,w]");
  }
  Shape expect = y.shape();
  expect[1] *= p.F;
  for (const Tensor* t : {&p.means, &p.scales, &p.weights}) {
    if (!t->defined() || t->shape() != expect) {
      throw ConfigError("gmm: parameter shape " +
                        (t->defined() ? shape_str(t->shape()) : "undefined") +
                        ", expected " + shape_str(expect));
    }
  }
}

}  // namespace

Tensor gmm_likelihood(const Tensor& y, const GmmTensors& params) {
  check_gmm_shapes(y, params);
  const std::size_t B = y.dim(0), M = y.dim(1);
  const std::size_t P = y.dim(2) * y.dim(3);
  const std::size_t F = params.F;
  const auto yv = y.data();
  const auto mv = params.means.data();
  const auto sv = params.scales.data();
  const auto wv = params.weights.data();
  std::vector<double> out(y.numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t e = (b * M + m) * P + p;
        double acc = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          const std::size_t c = (b * F * M + f * M + m) * P + p;
          acc += wv[c] * component_mass(yv[e] - mv[c], sv[c]);
        }
        out[e] = acc;
      }
    }
  }
  auto yn = y.node();
  auto mn = params.means.node();
  auto sn = params.scales.node();
  auto wn = params.weights.node();
  return make_op_result(
      "gmm_likelihood", y.shape(), std::move(out),
      {y, params.means, params.scales, params.weights},
      [=](std::span<const double> g) {
        std::span<double> gy, gm, gs, gw;
        if (yn->requires_grad) gy = yn->grad_buffer();
        if (mn->requires_grad) gm = mn->grad_buffer();
        if (sn->requires_grad) gs = sn->grad_buffer();
        if (wn->requires_grad) gw = wn->grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t p = 0; p < P; ++p) {
              const std::size_t e = (b * M + m) * P + p;
              for (std::size_t f = 0; f < F; ++f) {
                const std::size_t c = (b * F * M + f * M + m) * P + p;
                const double v = yn->value[e] - mn->value[c];
                const double s = sn->value[c];
                const double w = wn->value[c];
                const double hi = (v + 0.5) / s;
                const double lo = (v - 0.5) / s;
                const double phi_hi = normal_pdf(hi);
                const double phi_lo = normal_pdf(lo);
                const double d_v = w * (phi_hi - phi_lo) / s;
                if (!gy.empty()) gy[e] += g[e] * d_v;
                if (!gm.empty()) gm[c] -= g[e] * d_v;
                if (!gs.empty()) gs[c] -= g[e] * w * (hi * phi_hi - lo * phi_lo) / s;
                if (!gw.empty()) gw[c] += g[e] * component_mass(v, s);
              }
            }
          }
        }
      });
}

std::vector<double> element_bits(const Tensor& latents, const GmmTensors& params) {
  check_gmm_shapes(latents, params);
  const std::size_t B = latents.dim(0), M = latents.dim(1);
  const std::size_t H = latents.dim(2), W = latents.dim(3);
  const auto yv = latents.data();
  std::vector<double> bits(latents.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t e = ((b * M + m) * H + i) * W + j;
          const long k = std::lround(yv[e]);
          bits[e] = -std::log2(gmm_pmf(k, element_params(params, b, m, i, j)));
        }
  return bits;
}

double estimate_bits(const Tensor& latents, const GmmTensors& params) {
  const std::vector<double> bits = element_bits(latents, params);
  return std::accumulate(bits.begin(), bits.end(), 0.0);
}

Tensor bits_from_likelihood(const Tensor& likelihood, double floor) {
  return ops::mul_scalar(ops::sum(ops::log(ops::clamp_min(likelihood, floor))),
                         -1.0 / std::log(2.0));
}

// ---------------------------------------------------------------------------
// Factorized prior

namespace {
constexpr std::size_t kPriorStages = 4;
}

FactorizedPrior::FactorizedPrior(const ModelWeights& weights, std::size_t channels)
    : channels_(channels) {
  for (std::size_t k = 0; k < kPriorStages; ++k) {
    const std::string p = "prior.stage" + std::to_string(k + 1);
    const Tensor& mat = weights.at(p + ".matrix");
    const Tensor& bias = weights.at(p + ".bias");
    if (mat.rank() != 3 || mat.dim(0) != channels || bias.rank() != 3 ||
        bias.dim(0) != channels || bias.dim(1) != mat.dim(1)) {
      throw ConfigError(p + ": shape mismatch for " + std::to_string(channels) +
                        " channels");
    }
    if (k > 0 && mat.dim(2) != matrices_.back().dim(1)) {
      throw ConfigError(p + ": stage widths do not chain");
    }
    matrices_.push_back(mat);
    biases_.push_back(bias);
    if (k + 1 < kPriorStages) factors_.push_back(weights.at(p + ".factor"));
  }
  if (matrices_.front().dim(2) != 1 || matrices_.back().dim(1) != 1) {
    throw ConfigError("prior: first stage must take and last must emit width 1");
  }
}

Tensor FactorizedPrior::logits(const Tensor& rows) const {
  Tensor v = rows;
  for (std::size_t k = 0; k < kPriorStages; ++k) {
    v = ops::add_broadcast_last(ops::batched_matmul(ops::softplus(matrices_[k]), v),
                                biases_[k]);
    if (k + 1 < kPriorStages) {
      v = ops::add(v, ops::mul_broadcast_last(ops::tanh(v), ops::tanh(factors_[k])));
    }
  }
  return v;
}

Tensor FactorizedPrior::likelihood(const Tensor& z_tilde) const {
  if (!z_tilde.defined() || z_tilde.rank() != 4 || z_tilde.dim(1) != channels_) {
    throw ConfigError("prior: expected [B," + std::to_string(channels_) +
                      ",h,w] hyper-latent");
  }
  const Tensor rows = ops::channels_to_rows(z_tilde);
  const Tensor lower = logits(ops::add_scalar(rows, -0.5));
  const Tensor upper = logits(ops::add_scalar(rows, 0.5));
  // Flip to the side where both sigmoids are small; the sign is a constant.
  std::vector<double> sign(lower.numel());
  for (std::size_t i = 0; i < sign.size(); ++i) {
    sign[i] = (lower.data()[i] + upper.data()[i]) > 0 ? -1.0 : 1.0;
  }
  const Tensor s(lower.shape(), std::move(sign));
  const Tensor mass = ops::abs(
      ops::sub(ops::sigmoid(ops::mul(upper, s)), ops::sigmoid(ops::mul(lower, s))));
  return ops::rows_to_channels(mass, z_tilde.shape());
}

double FactorizedPrior::logit(double x, std::size_t channel) const {
  if (channel >= channels_) throw ConfigError("prior: channel out of range");
  double v[3] = {x, 0, 0};
  double next[3];
  std::size_t width = 1;
  for (std::size_t k = 0; k < kPriorStages; ++k) {
    const std::size_t out = matrices_[k].dim(1);
    const auto mat = matrices_[k].data().subspan(channel * out * width, out * width);
    const auto bias = biases_[k].data().subspan(channel * out, out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < width; ++i) acc += softplus(mat[o * width + i]) * v[i];
      next[o] = acc + bias[o];
    }
    if (k + 1 < kPriorStages) {
      const auto fac = factors_[k].data().subspan(channel * out, out);
      for (std::size_t o = 0; o < out; ++o) {
        next[o] += std::tanh(fac[o]) * std::tanh(next[o]);
      }
    }
    std::copy_n(next, out, v);
    width = out;
  }
  return v[0];
}

double FactorizedPrior::cdf(double x, std::size_t channel) const {
  return sigmoid(logit(x, channel));
}

double FactorizedPrior::mass(double center, std::size_t channel) const {
  const double lower = logit(center - 0.5, channel);
  const double upper = logit(center + 0.5, channel);
  const double s = (lower + upper) > 0 ? -1.0 : 1.0;
  return std::abs(sigmoid(s * upper) - sigmoid(s * lower));
}

double FactorizedPrior::pmf(long k, std::size_t channel) const {
  return std::max(mass(static_cast<double>(k), channel), kPmfFloor);
}

double FactorizedPrior::median(std::size_t channel) const {
  double lo = -1.0, hi = 1.0;
  while (logit(lo, channel) > 0 && lo > -1e9) lo *= 2;
  while (logit(hi, channel) < 0 && hi < 1e9) hi *= 2;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (logit(mid, channel) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double factorized_bits(const Tensor& z_hat, const FactorizedPrior& prior) {
  if (z_hat.rank() != 4 || z_hat.dim(1) != prior.channels()) {
    throw ConfigError("factorized_bits: channel mismatch");
  }
  const std::size_t C = z_hat.dim(1), P = z_hat.dim(2) * z_hat.dim(3);
  double bits = 0.0;
  for (std::size_t b = 0; b < z_hat.dim(0); ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const long k = std::lround(z_hat.data()[(b * C + c) * P + p]);
        bits -= std::log2(prior.pmf(k, c));
      }
  return bits;
}

// ---------------------------------------------------------------------------
// Quantized tables

std::vector<std::uint32_t> build_cdf_table(std::span<const double> probabilities,
                                           int precision_bits) {
  if (precision_bits < 1 || precision_bits > 24) {
    throw ModelError("cdf precision must be in [1, 24] bits");
  }
  const std::uint64_t total = std::uint64_t{1} << precision_bits;
  const std::size_t n = probabilities.size();
  if (n == 0 || n > total / 2) {
    throw ModelError("cdf table needs 1.." + std::to_string(total / 2) + " symbols");
  }
  const double floor = 1.0 / static_cast<double>(total);
  std::vector<double> q(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probabilities[i];
    if (!std::isfinite(p) || p < -1e-12) throw ModelError("invalid probability");
    q[i] = std::max(p, floor);
    sum += q[i];
  }
  std::vector<std::uint64_t> freq(n);
  std::vector<double> rem(n);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = q[i] / sum * static_cast<double>(total);
    freq[i] = static_cast<std::uint64_t>(std::floor(g));
    rem[i] = g - static_cast<double>(freq[i]);
    assigned += freq[i];
  }
  // Largest remainder, with empty slots served first.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if ((freq[a] == 0) != (freq[b] == 0)) return freq[a] == 0;
    return rem[a] > rem[b];
  });
  std::size_t cursor = 0;
  while (assigned < total) {
    ++freq[order[cursor % n]];
    ++assigned;
    ++cursor;
  }
  for (std::size_t i = 0; i < n && assigned > total;) {
    // Only reachable through rounding in the sum; trim the largest entries.
    const std::size_t big = static_cast<std::size_t>(
        std::max_element(freq.begin(), freq.end()) - freq.begin());
    --freq[big];
    --assigned;
    (void)i;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (freq[i] == 0) {
      // Borrow from the largest entry.
      const std::size_t big = static_cast<std::size_t>(
          std::max_element(freq.begin(), freq.end()) - freq.begin());
      --freq[big];
      ++freq[i];
    }
  }
  std::vector<std::uint32_t> cdf(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cdf[i + 1] = cdf[i] + static_cast<std::uint32_t>(freq[i]);
  }
  return cdf;
}

namespace {

long symmetric_round(double v) {
  if (!std::isfinite(v) || std::abs(v) > 1e9) {
    throw ModelError("table center out of range");
  }
  return std::lround(v);
}

}  // namespace

CdfTable gmm_cdf_table(const GmmParams& params) {
  params.validate();
  const long center = symmetric_round(params.mean());
  const long lo = center - kSupportRadius;
  const std::size_t n = 2 * kSupportRadius + 1;
  // Boundary CDFs at lo - 0.5 + t, kept as lower and upper tails.
  std::vector<double> below(n + 1), above(n + 1);
  for (std::size_t t = 0; t <= n; ++t) {
    const double edge = static_cast<double>(lo) - 0.5 + static_cast<double>(t);
    double c = 0.0, u = 0.0;
    for (std::size_t f = 0; f < params.components(); ++f) {
      const double z = (edge - params.means[f]) / params.scales[f];
      c += params.weights[f] * normal_cdf(z);
      u += params.weights[f] * normal_cdf(-z);
    }
    below[t] = c;
    above[t] = u;
  }
  std::vector<double> probs(n + 1);
  for (std::size_t t = 0; t < n; ++t) {
    const double edge_mid = static_cast<double>(lo) + static_cast<double>(t);
    // Difference taken on whichever tail is smaller for precision.
    probs[t] = edge_mid <= params.mean() ? below[t + 1] - below[t]
                                         : above[t] - above[t + 1];
  }
  probs[n] = below[0] + above[n];
  CdfTable table;
  table.cdf = build_cdf_table(probs);
  table.min_symbol = lo;
  table.has_escape = true;
  return table;
}

CdfTable factorized_cdf_table(const FactorizedPrior& prior, std::size_t channel) {
  const long center = symmetric_round(prior.median(channel));
  const long lo = center - kSupportRadius;
  const std::size_t n = 2 * kSupportRadius + 1;
  std::vector<double> probs(n + 1);
  for (std::size_t t = 0; t < n; ++t) {
    probs[t] = prior.mass(static_cast<double>(lo) + static_cast<double>(t), channel);
  }
  const double below = sigmoid(prior.logit(static_cast<double>(lo) - 0.5, channel));
  const double above = sigmoid(
      -prior.logit(static_cast<double>(lo) + static_cast<double>(n) - 0.5, channel));
  probs[n] = below + above;
  CdfTable table;
  table.cdf = build_cdf_table(probs);
  table.min_symbol = lo;
  table.has_escape = true;
  return table;
}

std::vector<CdfTable> gmm_cdf_tables(const std::vector<GmmParams>& params,
                                     unsigned threads) {
  std::vector<CdfTable> tables(params.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers =
      std::min<std::size_t>(threads, std::max<std::size_t>(1, params.size() / 256));
  const auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) tables[i] = gmm_cdf_table(params[i]);
  };
  if (workers <= 1) {
    run(0, params.size());
    return tables;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (params.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(params.size(), begin + chunk);
    pool.emplace_back([&, w, begin, end] {
      try {
        run(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return tables;
}

}  // namespace edic
