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
#include <span>
#include <vector>

#include "edic/network.hpp"
#include "edic/tensor.hpp"

namespace edic {

/// Coding precision of quantized CDF tables.
inline constexpr int kPrecisionBits = 16;
/// Probability floor applied before coding: 2^-16.
inline constexpr double kPmfFloor = 1.0 / 65536.0;
/// Half-width of the per-element support window around the rounded center.
inline constexpr long kSupportRadius = 64;

/// Standard normal CDF, accurate in both tails.
double normal_cdf(double x);

/// Mixture parameters of one latent element.
struct GmmParams {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> scales;

  std::size_t components() const { return weights.size(); }
  double mean() const;  // sum_i w_i mu_i
  /// ModelError unless sizes agree, weights sum to 1 (1e-9), scales >= 1e-3
  /// and all values are finite.
  void validate() const;
};

/// Probability mass of the unit bin centered at `center` (a real number; the
/// pmf at integer k when center == k). No floor is applied.
double gmm_mass(double center, const GmmParams& params);

/// Discretized mixture pmf, floored at kPmfFloor.
double gmm_pmf(long k, const GmmParams& params);

/// Single-Gaussian special case.
double gaussian_pmf(long k, double mean, double scale);

/// Parameters of latent element (b, m, i, j) from the network's tensors.
GmmParams element_params(const GmmTensors& params, std::size_t b, std::size_t m,
                         std::size_t i, std::size_t j);
std::vector<GmmParams> all_element_params(const GmmTensors& params);

/// Noise-relaxed likelihood of y (same shape as the latent tensor),
/// differentiable w.r.t. y and every mixture parameter.
Tensor gmm_likelihood(const Tensor& y, const GmmTensors& params);

/// -log2 of the floored pmf per element of an integer valued latent tensor.
std::vector<double> element_bits(const Tensor& latents, const GmmTensors& params);
/// Total of element_bits.
double estimate_bits(const Tensor& latents, const GmmTensors& params);

/// Differentiable -sum(log2(max(likelihood, floor))).
Tensor bits_from_likelihood(const Tensor& likelihood, double floor = 1e-9);

/// Per-channel learned monotone CDF for the hyper-latent: four stages of
/// width 3, matrices kept nonnegative by softplus, tanh-gated residuals.
class FactorizedPrior {
 public:
  FactorizedPrior(const ModelWeights& weights, std::size_t channels);

  std::size_t channels() const { return channels_; }

  /// Differentiable likelihood of z_tilde [B,C,h,w] (same shape out).
  Tensor likelihood(const Tensor& z_tilde) const;

  /// Scalar evaluation (no tape).
  double logit(double x, std::size_t channel) const;
  double cdf(double x, std::size_t channel) const;
  double mass(double center, std::size_t channel) const;  // unfloored
  double pmf(long k, std::size_t channel) const;          // floored
  double median(std::size_t channel) const;

 private:
  Tensor logits(const Tensor& rows) const;

  std::size_t channels_;
  std::vector<Tensor> matrices_, biases_, factors_;
};

/// -log2 pmf summed over an integer valued hyper-latent tensor.
double factorized_bits(const Tensor& z_hat, const FactorizedPrior& prior);

/// Quantized CDF: cdf[0] == 0, cdf.back() == 2^precision, strictly
/// increasing. Symbol s occupies [cdf[s], cdf[s+1]).
struct CdfTable {
  std::vector<std::uint32_t> cdf;
  long min_symbol = 0;      // value coded by index 0
  bool has_escape = false;  // last index is the escape symbol

  std::size_t size() const { return cdf.empty() ? 0 : cdf.size() - 1; }
  std::size_t regular_symbols() const { return size() - (has_escape ? 1 : 0); }
  std::uint32_t frequency(std::size_t s) const { return cdf[s + 1] - cdf[s]; }
  bool operator==(const CdfTable&) const = default;
};

/// Integer CDF from a probability vector: probabilities are floored at
/// 2^-precision, renormalized and apportioned by largest remainder, so every
/// symbol keeps mass >= 1 and each table probability lies within
/// 2^-precision of the renormalized input.
std::vector<std::uint32_t> build_cdf_table(std::span<const double> probabilities,
                                           int precision_bits = kPrecisionBits);

/// Table over [round(mean) - 64, round(mean) + 64] plus an escape symbol
/// carrying the remaining tail mass.
CdfTable gmm_cdf_table(const GmmParams& params);
CdfTable factorized_cdf_table(const FactorizedPrior& prior, std::size_t channel);

/// Builds one table per element; work is split across up to `threads`
/// workers and the result does not depend on the split.
std::vector<CdfTable> gmm_cdf_tables(const std::vector<GmmParams>& params,
                                     unsigned threads = 0);

}  // namespace edic
