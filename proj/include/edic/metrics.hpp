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
#include <string>
#include <vector>

#include "edic/network.hpp"
#include "edic/tensor.hpp"

namespace edic {

/// PSNR cap written to reports in place of +inf.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / mse) on [0,1] images; +inf for identical inputs.
double psnr(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);

inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Differentiable MS-SSIM with an 11x11 Gaussian window (sigma 1.5), computed
/// per image plane and averaged. Uses the first `scales` weights,
/// renormalized; images too small for that many scales fall back to fewer.
Tensor ms_ssim_tensor(const Tensor& a, const Tensor& b, std::size_t scales = 5);
double ms_ssim(const Tensor& a, const Tensor& b, std::size_t scales = 5);
/// -10 log10(1 - v); +inf at v == 1.
double ms_ssim_db(double v);
/// Scale count actually used for an image of this size.
std::size_t ms_ssim_scales(std::size_t height, std::size_t width, std::size_t requested);

struct RDPoint {
  double bpp = 0.0;
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  double lambda = 0.0;
};

struct RDCurve {
  std::string label;
  std::vector<RDPoint> points;

  /// Sorts by bpp; UsageError on repeated rates.
  void sort();
  /// UsageError unless bpp is strictly increasing with at least
  /// `min_points` points.
  void validate(std::size_t min_points = 4) const;
};

enum class Quality { kPsnr, kMsSsimDb };

/// Bjontegaard delta rate in percent: log-rate fitted as a cubic in quality
/// for each curve, averaged over the shared quality range. Negative means the
/// test curve needs less rate.
double bdbr(const RDCurve& anchor, const RDCurve& test, Quality q = Quality::kPsnr);

/// Bits per latent location, summed over channels.
struct BitMap {
  std::size_t height = 0, width = 0;
  std::vector<double> bits;  // row-major

  double total() const;
  BitMap operator-(const BitMap& other) const;
  /// Min-max normalized to 8 bits; a flat map is all zeros.
  std::vector<std::uint8_t> gray8() const;
};

BitMap bit_allocation_map(const Tensor& y_hat, const GmmTensors& params);
/// Writes the normalized map as a grayscale image (PNG or PPM by extension).
void write_bitmap(const std::filesystem::path& path, const BitMap& map);

/// Line plot of quality against bpp for each curve.
std::string rd_svg(const std::vector<RDCurve>& curves, Quality q = Quality::kPsnr);

}  // namespace edic
