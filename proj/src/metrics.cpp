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

#include "edic/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "edic/bitstream.hpp"
#include "edic/entropy.hpp"
#include "edic/error.hpp"
#include "edic/ops.hpp"

namespace edic {

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr std::size_t kWindow = 11;
constexpr double kWindowSigma = 1.5;

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape() || a.numel() == 0) {
    throw ConfigError(std::string(what) + ": images must be non-empty and the same shape");
  }
}

Tensor gaussian_window(std::size_t size) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1) / 2;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2 * kWindowSigma * kWindowSigma));
  }
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  std::vector<double> k(size * size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) k[i * size + j] = g[i] * g[j] / (s * s);
  return Tensor({1, 1, size, size}, std::move(k));
}

// Mean over each plane of a [P,1,h,w] map -> [1,P].
Tensor plane_mean(const Tensor& x) {
  return ops::global_avg_pool(ops::reshape(x, {1, x.dim(0), x.dim(2), x.dim(3)}));
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

std::size_t ms_ssim_scales(std::size_t height, std::size_t width, std::size_t requested) {
  std::size_t side = std::min(height, width);
  std::size_t s = 1;
  while (s < requested && side / 2 >= kWindow) {
    side /= 2;
    ++s;
  }
  return s;
}

Tensor ms_ssim_tensor(const Tensor& a, const Tensor& b, std::size_t scales) {
  require_same(a, b, "ms_ssim");
  if (a.rank() != 4) throw ConfigError("ms_ssim: expected [B,C,H,W] images");
  if (scales < 1 || scales > 5) throw ConfigError("ms_ssim: scales must be in [1,5]");
  const std::size_t planes = a.dim(0) * a.dim(1);
  const std::size_t H = a.dim(2), W = a.dim(3);
  const std::size_t S = ms_ssim_scales(H, W, scales);
  std::size_t window = std::min({kWindow, H, W});
  if (window % 2 == 0) --window;
  const Tensor g = gaussian_window(window);
  const Tensor no_bias;

  double wsum = 0.0;
  for (std::size_t s = 0; s < S; ++s) wsum += kMsSsimWeights[s];

  Tensor x = ops::reshape(a, {planes, 1, H, W});
  Tensor y = ops::reshape(b, {planes, 1, H, W});
  Tensor result;
  for (std::size_t s = 0; s < S; ++s) {
    const auto blur = [&](const Tensor& t) { return ops::conv2d(t, g, no_bias, 1, 0); };
    const Tensor mx = blur(x), my = blur(y);
    const Tensor mxx = ops::square(mx), myy = ops::square(my), mxy = ops::mul(mx, my);
    const Tensor sxx = ops::sub(blur(ops::square(x)), mxx);
    const Tensor syy = ops::sub(blur(ops::square(y)), myy);
    const Tensor sxy = ops::sub(blur(ops::mul(x, y)), mxy);
    const Tensor cs = ops::div(ops::add_scalar(ops::mul_scalar(sxy, 2.0), kSsimC2),
                               ops::add_scalar(ops::add(sxx, syy), kSsimC2));
    Tensor term;
    if (s + 1 < S) {
      term = plane_mean(cs);
    } else {
      const Tensor l = ops::div(ops::add_scalar(ops::mul_scalar(mxy, 2.0), kSsimC1),
                                ops::add_scalar(ops::add(mxx, myy), kSsimC1));
      term = plane_mean(ops::mul(l, cs));
    }
    // Negative structure terms have no real power; they clamp to a tiny value.
    term = ops::pow_scalar(ops::clamp_min(term, 1e-8), kMsSsimWeights[s] / wsum);
    result = result.defined() ? ops::mul(result, term) : term;
    if (s + 1 < S) {
      x = ops::avg_pool2x2(x);
      y = ops::avg_pool2x2(y);
    }
  }
  return ops::mean(result);
}

double ms_ssim(const Tensor& a, const Tensor& b, std::size_t scales) {
  NoGradGuard guard;
  return ms_ssim_tensor(a.detach(), b.detach(), scales).item();
}

double ms_ssim_db(double v) {
  if (v >= 1.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(1.0 - v);
}

// ---------------------------------------------------------------------------

void RDCurve::sort() {
  std::sort(points.begin(), points.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
  validate(1);
}

void RDCurve::validate(std::size_t min_points) const {
  if (points.size() < min_points) {
    throw UsageError("curve '" + label + "' has " + std::to_string(points.size()) +
                     " points, need " + std::to_string(min_points));
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].bpp > 0) || !std::isfinite(points[i].bpp)) {
      throw UsageError("curve '" + label + "': bpp must be positive");
    }
    if (i > 0 && !(points[i].bpp > points[i - 1].bpp)) {
      throw UsageError("curve '" + label + "': bpp must be strictly increasing");
    }
  }
}

namespace {

double quality(const RDPoint& p, Quality q) {
  const double v = q == Quality::kPsnr ? p.psnr_db : ms_ssim_db(p.ms_ssim);
  if (!std::isfinite(v)) throw UsageError("bdbr: non-finite quality value");
  return v;
}

// Least-squares cubic log(rate) = c0 + c1 t + c2 t^2 + c3 t^3 in the
// normalized quality t = (q - shift) / scale.
Eigen::Vector4d fit_cubic(const std::vector<double>& q, const std::vector<double>& lr,
                          double shift, double scale) {
  Eigen::MatrixXd A(q.size(), 4);
  Eigen::VectorXd rhs(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double t = (q[i] - shift) / scale;
    A(i, 0) = 1;
    A(i, 1) = t;
    A(i, 2) = t * t;
    A(i, 3) = t * t * t;
    rhs(i) = lr[i];
  }
  return A.colPivHouseholderQr().solve(rhs);
}

double integral(const Eigen::Vector4d& c, double t0, double t1) {
  const auto prim = [&](double t) {
    return c(0) * t + c(1) * t * t / 2 + c(2) * t * t * t / 3 + c(3) * t * t * t * t / 4;
  };
  return prim(t1) - prim(t0);
}

}  // namespace

double bdbr(const RDCurve& anchor, const RDCurve& test, Quality q) {
  anchor.validate(4);
  test.validate(4);
  std::vector<double> qa, qt, ra, rt;
  for (const auto& p : anchor.points) {
    qa.push_back(quality(p, q));
    ra.push_back(std::log(p.bpp));
  }
  for (const auto& p : test.points) {
    qt.push_back(quality(p, q));
    rt.push_back(std::log(p.bpp));
  }
  const auto [amin, amax] = std::minmax_element(qa.begin(), qa.end());
  const auto [tmin, tmax] = std::minmax_element(qt.begin(), qt.end());
  const double lo = std::max(*amin, *tmin);
  const double hi = std::min(*amax, *tmax);
  if (!(hi > lo)) throw UsageError("bdbr: curves share no quality range");
  const double shift = 0.5 * (lo + hi);
  const double scale = 0.5 * (hi - lo);
  const Eigen::Vector4d ca = fit_cubic(qa, ra, shift, scale);
  const Eigen::Vector4d ct = fit_cubic(qt, rt, shift, scale);
  const double avg = (integral(ct, -1, 1) - integral(ca, -1, 1)) / 2.0;
  return (std::exp(avg) - 1.0) * 100.0;
}

// ---------------------------------------------------------------------------

double BitMap::total() const { return std::accumulate(bits.begin(), bits.end(), 0.0); }

BitMap BitMap::operator-(const BitMap& other) const {
  if (height != other.height || width != other.width) {
    throw ConfigError("bit map difference needs equal grid sizes");
  }
  BitMap d = *this;
  for (std::size_t i = 0; i < bits.size(); ++i) d.bits[i] -= other.bits[i];
  return d;
}

std::vector<std::uint8_t> BitMap::gray8() const {
  std::vector<std::uint8_t> out(bits.size(), 0);
  if (bits.empty()) return out;
  const auto [lo, hi] = std::minmax_element(bits.begin(), bits.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (bits[i] - *lo) / range));
  }
  return out;
}

BitMap bit_allocation_map(const Tensor& y_hat, const GmmTensors& params) {
  const std::vector<double> bits = element_bits(y_hat, params);
  BitMap map;
  map.height = y_hat.dim(2);
  map.width = y_hat.dim(3);
  const std::size_t P = map.height * map.width;
  map.bits.assign(P, 0.0);
  for (std::size_t e = 0; e < bits.size(); ++e) map.bits[e % P] += bits[e];
  return map;
}

void write_bitmap(const std::filesystem::path& path, const BitMap& map) {
  const std::vector<std::uint8_t> g = map.gray8();
  const std::size_t P = g.size();
  std::vector<double> v(3 * P);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < P; ++i) v[c * P + i] = g[i] / 255.0;
  write_image(path, Tensor({1, 3, map.height, map.width}, std::move(v)));
}

std::string rd_svg(const std::vector<RDCurve>& curves, Quality q) {
  constexpr double kW = 640, kH = 480, kMargin = 60;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b"};
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      const double v = std::min(quality(p, q), kPsnrCap);
      xmin = std::min(xmin, p.bpp);
      xmax = std::max(xmax, p.bpp);
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) throw UsageError("rd plot: no points");
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const auto px = [&](double x) { return kMargin + (x - xmin) / (xmax - xmin) * (kW - 2 * kMargin); };
  const auto py = [&](double y) { return kH - kMargin - (y - ymin) / (ymax - ymin) * (kH - 2 * kMargin); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kW - kMargin
    << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
    << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">bpp ["
    << xmin << ", " << xmax << "]</text>\n";
  s << "<text x=\"15\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 15 " << kH / 2
    << ")\" text-anchor=\"middle\">" << (q == Quality::kPsnr ? "PSNR" : "MS-SSIM")
    << " dB [" << ymin << ", " << ymax << "]</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& p : curves[i].points) {
      s << px(p.bpp) << ',' << py(std::min(quality(p, q), kPsnrCap)) << ' ';
    }
    s << "\"/>\n<text x=\"" << kW - kMargin << "\" y=\"" << kMargin + 18.0 * i
      << "\" fill=\"" << color << "\" text-anchor=\"end\">" << curves[i].label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace edic
