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

#include "edic/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "edic/error.hpp"

namespace edic::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(std::span<const double>)>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined input");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " +
                      std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor finish(Shape shape, std::vector<double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite output");
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void attach(Tensor& out, std::initializer_list<const Tensor*> inputs,
            BackwardFn fn) {
  Node& node = *out.node();
  node.requires_grad = true;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) node.parents.push_back(t->node());
  }
  node.backward = std::move(fn);
}

// f(x) forward; d(x, y) = dy/dx given input and output.
template <class F, class D>
Tensor unary(const Tensor& x, const char* op, F f, D d) {
  require_defined(x, op);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor result = finish(x.shape(), std::move(out), op);
  if (tracking({&x})) {
    NodePtr xn = x.node();
    Node* self = result.node().get();
    attach(result, {&x}, [xn, self, d](std::span<const double> g) {
      auto gx = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * d(xn->value[i], self->value[i]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor r = finish(a.shape(), std::move(out), "add");
  if (tracking({&a, &b})) {
    NodePtr an = a.requires_grad() ? a.node() : nullptr;
    NodePtr bn = b.requires_grad() ? b.node() : nullptr;
    attach(r, {&a, &b}, [an, bn](std::span<const double> g) {
      for (const NodePtr& n : {an, bn}) {
        if (!n) continue;
        auto gi = n->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor r = finish(a.shape(), std::move(out), "sub");
  if (tracking({&a, &b})) {
    NodePtr an = a.requires_grad() ? a.node() : nullptr;
    NodePtr bn = b.requires_grad() ? b.node() : nullptr;
    attach(r, {&a, &b}, [an, bn](std::span<const double> g) {
      if (an) {
        auto ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn) {
        auto gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor r = finish(a.shape(), std::move(out), "mul");
  if (tracking({&a, &b})) {
    NodePtr an = a.node();
    NodePtr bn = b.node();
    attach(r, {&a, &b}, [an, bn](std::span<const double> g) {
      if (an->requires_grad) {
        auto ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
      }
    });
  }
  return r;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  Tensor r = finish(a.shape(), std::move(out), "div");
  if (tracking({&a, &b})) {
    NodePtr an = a.node();
    NodePtr bn = b.node();
    Node* self = r.node().get();
    attach(r, {&a, &b}, [an, bn, self](std::span<const double> g) {
      if (an->requires_grad) {
        auto ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bn->value[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] -= g[i] * self->value[i] / bn->value[i];
        }
      }
    });
  }
  return r;
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      x, "add_scalar", [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(
      x, "mul_scalar", [c](double v) { return v * c; },
      [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
  return unary(
      x, "pow_scalar", [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) {
        return exponent * std::pow(v, exponent - 1.0);
      });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(
      x, "clamp_min", [floor](double v) { return std::max(v, floor); },
      [floor](double v, double) { return v >= floor ? 1.0 : 0.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, "leaky_relu", [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus",
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ConfigError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  Tensor r = finish(s, std::move(out), "softmax");
  if (tracking({&x})) {
    NodePtr xn = x.node();
    Node* self = r.node().get();
    attach(r, {&x}, [xn, self, outer, inner, n](std::span<const double> g) {
      auto gx = xn->grad_buffer();
      const auto& y = self->value;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < n; ++k) {
            dot += g[base + k * inner] * y[base + k * inner];
          }
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = base + k * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return r;
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor r = finish({1}, {total}, "sum");
  if (tracking({&x})) {
    NodePtr xn = x.node();
    attach(r, {&x}, [xn](std::span<const double> g) {
      for (double& v : xn->grad_buffer()) v += g[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw ConfigError("mean: empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ConfigError("reshape: " + shape_str(x.shape()) + " to " +
                      shape_str(shape));
  }
  const auto xv = x.data();
  Tensor r(std::move(shape), std::vector<double>(xv.begin(), xv.end()));
  if (tracking({&x})) {
    NodePtr xn = x.node();
    attach(r, {&x}, [xn](std::span<const double> g) {
      auto gx = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return r;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  require_defined(x, "slice_channels");
  const Shape& s = x.shape();
  if (s.size() < 2 || begin >= end || end > s[1]) {
    throw ConfigError("slice_channels: [" + std::to_string(begin) + "," +
                      std::to_string(end) + ") of " + shape_str(s));
  }
  const std::size_t batch = s[0];
  const std::size_t channels = s[1];
  const std::size_t inner = x.numel() / (batch * channels);
  const std::size_t width = end - begin;
  Shape out_shape = s;
  out_shape[1] = width;
  const auto xv = x.data();
  std::vector<double> out(batch * width * inner);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(xv.begin() + (b * channels + begin) * inner, width * inner,
                out.begin() + b * width * inner);
  }
  Tensor r(std::move(out_shape), std::move(out));
  if (tracking({&x})) {
    NodePtr xn = x.node();
    attach(r, {&x}, [=](std::span<const double> g) {
      auto gx = xn->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t src = b * width * inner;
        const std::size_t dst = (b * channels + begin) * inner;
        for (std::size_t i = 0; i < width * inner; ++i) gx[dst + i] += g[src + i];
      }
    });
  }
  return r;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  for (const Tensor& p : parts) require_defined(p, "concat_channels");
  const Shape& first = parts[0].shape();
  if (first.size() < 2) throw ConfigError("concat_channels: rank must be >= 2");
  const std::size_t batch = first[0];
  const std::size_t inner = parts[0].numel() / (first[0] * first[1]);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size() || s[0] != batch ||
        !std::equal(s.begin() + 2, s.end(), first.begin() + 2)) {
      throw ConfigError("concat_channels: " + shape_str(s) + " vs " + shape_str(first));
    }
    total += s[1];
  }
  Shape out_shape = first;
  out_shape[1] = total;
  std::vector<double> out(batch * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.dim(1);
    const auto pv = p.data();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(pv.begin() + b * c * inner, c * inner,
                  out.begin() + (b * total + offset) * inner);
    }
    offsets.push_back(offset);
    offset += c;
  }
  Tensor r(std::move(out_shape), std::move(out));
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (grad_enabled() && any) {
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    Node& node = *r.node();
    node.requires_grad = true;
    for (const NodePtr& n : nodes) {
      if (n->requires_grad) node.parents.push_back(n);
    }
    node.backward = [=](std::span<const double> g) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        const NodePtr& n = nodes[i];
        if (!n->requires_grad) continue;
        const std::size_t c = n->shape[1];
        auto gi = n->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          const double* src = g.data() + (b * total + offsets[i]) * inner;
          double* dst = gi.data() + b * c * inner;
          for (std::size_t k = 0; k < c * inner; ++k) dst[k] += src[k];
        }
      }
    };
  }
  return r;
}

Tensor channels_to_rows(const Tensor& x) {
  require_rank(x, 4, "channels_to_rows");
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(xv.begin() + (b * channels + c) * plane, plane,
                  out.begin() + c * batch * plane + b * plane);
    }
  }
  Tensor r({channels, 1, batch * plane}, std::move(out));
  if (tracking({&x})) {
    NodePtr xn = x.node();
    attach(r, {&x}, [=](std::span<const double> g) {
      auto gx = xn->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t dst = (b * channels + c) * plane;
          const std::size_t src = c * batch * plane + b * plane;
          for (std::size_t i = 0; i < plane; ++i) gx[dst + i] += g[src + i];
        }
      }
    });
  }
  return r;
}

Tensor rows_to_channels(const Tensor& x, const Shape& nchw) {
  require_rank(x, 3, "rows_to_channels");
  if (nchw.size() != 4 || x.dim(0) != nchw[1] || x.dim(1) != 1 ||
      x.dim(2) != nchw[0] * nchw[2] * nchw[3]) {
    throw ConfigError("rows_to_channels: " + shape_str(x.shape()) + " to " +
                      shape_str(nchw));
  }
  const std::size_t batch = nchw[0], channels = nchw[1];
  const std::size_t plane = nchw[2] * nchw[3];
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(xv.begin() + c * batch * plane + b * plane, plane,
                  out.begin() + (b * channels + c) * plane);
    }
  }
  Tensor r = finish(nchw, std::move(out), "rows_to_channels");
  if (tracking({&x})) {
    NodePtr xn = x.node();
    attach(r, {&x}, [=](std::span<const double> g) {
      auto gx = xn->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t src = (b * channels + c) * plane;
          const std::size_t dst = c * batch * plane + b * plane;
          for (std::size_t i = 0; i < plane; ++i) gx[dst + i] += g[src + i];
        }
      }
    });
  }
  return r;
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  require_rank(x, 4, "scale_channels");
  require_rank(s, 2, "scale_channels");
  if (s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
    throw ConfigError("scale_channels: " + shape_str(x.shape()) + " with " +
                      shape_str(s.shape()));
  }
  const std::size_t groups = s.numel();
  const std::size_t plane = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  const auto sv = s.data();
  std::vector<double> out(xv.size());
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < plane; ++i) {
      out[g * plane + i] = xv[g * plane + i] * sv[g];
    }
  }
  Tensor r = finish(x.shape(), std::move(out), "scale_channels");
  if (tracking({&x, &s})) {
    NodePtr xn = x.node();
    NodePtr sn = s.node();
    attach(r, {&x, &s}, [=](std::span<const double> g) {
      if (xn->requires_grad) {
        auto gx = xn->grad_buffer();
        for (std::size_t k = 0; k < groups; ++k) {
          for (std::size_t i = 0; i < plane; ++i) {
            gx[k * plane + i] += g[k * plane + i] * sn->value[k];
          }
        }
      }
      if (sn->requires_grad) {
        auto gs = sn->grad_buffer();
        for (std::size_t k = 0; k < groups; ++k) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            acc += g[k * plane + i] * xn->value[k * plane + i];
          }
          gs[k] += acc;
        }
      }
    });
  }
  return r;
}

namespace {

void require_broadcast_last(const Tensor& x, const Tensor& b, const char* op) {
  require_rank(x, 3, op);
  require_rank(b, 3, op);
  if (b.dim(0) != x.dim(0) || b.dim(1) != x.dim(1) || b.dim(2) != 1) {
    throw ConfigError(std::string(op) + ": " + shape_str(x.shape()) + " with " +
                      shape_str(b.shape()));
  }
}

}  // namespace

Tensor add_broadcast_last(const Tensor& x, const Tensor& b) {
  require_broadcast_last(x, b, "add_broadcast_last");
  const std::size_t rows = b.numel();
  const std::size_t len = x.dim(2);
  const auto xv = x.data();
  const auto bv = b.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = xv[r * len + i] + bv[r];
  }
  Tensor res = finish(x.shape(), std::move(out), "add_broadcast_last");
  if (tracking({&x, &b})) {
    NodePtr xn = x.node();
    NodePtr bn = b.node();
    attach(res, {&x, &b}, [=](std::span<const double> g) {
      if (xn->requires_grad) {
        auto gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t i = 0; i < len; ++i) acc += g[r * len + i];
          gb[r] += acc;
        }
      }
    });
  }
  return res;
}

Tensor mul_broadcast_last(const Tensor& x, const Tensor& b) {
  require_broadcast_last(x, b, "mul_broadcast_last");
  const std::size_t rows = b.numel();
  const std::size_t len = x.dim(2);
  const auto xv = x.data();
  const auto bv = b.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = xv[r * len + i] * bv[r];
  }
  Tensor res = finish(x.shape(), std::move(out), "mul_broadcast_last");
  if (tracking({&x, &b})) {
    NodePtr xn = x.node();
    NodePtr bn = b.node();
    attach(res, {&x, &b}, [=](std::span<const double> g) {
      if (xn->requires_grad) {
        auto gx = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < len; ++i) {
            gx[r * len + i] += g[r * len + i] * bn->value[r];
          }
        }
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t i = 0; i < len; ++i) {
            acc += g[r * len + i] * xn->value[r * len + i];
          }
          gb[r] += acc;
        }
      }
    });
  }
  return res;
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t groups = a.dim(0), rows = a.dim(1), inner = a.dim(2);
  const std::size_t cols = b.dim(2);
  if (b.dim(0) != groups || b.dim(1) != inner) {
    throw ConfigError("batched_matmul: " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(groups * rows * cols);
  for (std::size_t g = 0; g < groups; ++g) {
    ConstMatMap am(av.data() + g * rows * inner, rows, inner);
    ConstMatMap bm(bv.data() + g * inner * cols, inner, cols);
    MatMap om(out.data() + g * rows * cols, rows, cols);
    om.noalias() = am * bm;
  }
  Tensor r = finish({groups, rows, cols}, std::move(out), "batched_matmul");
  if (tracking({&a, &b})) {
    NodePtr an = a.node();
    NodePtr bn = b.node();
    attach(r, {&a, &b}, [=](std::span<const double> g) {
      for (std::size_t k = 0; k < groups; ++k) {
        ConstMatMap gm(g.data() + k * rows * cols, rows, cols);
        if (an->requires_grad) {
          ConstMatMap bm(bn->value.data() + k * inner * cols, inner, cols);
          MatMap ga(an->grad_buffer().data() + k * rows * inner, rows, inner);
          ga.noalias() += gm * bm.transpose();
        }
        if (bn->requires_grad) {
          ConstMatMap am(an->value.data() + k * rows * inner, rows, inner);
          MatMap gb(bn->grad_buffer().data() + k * inner * cols, inner, cols);
          gb.noalias() += am.transpose() * gm;
        }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + GEMM)

namespace {

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t k, stride, pad;
  std::size_t out_h, out_w;  // sliding-window grid
};

// Output columns [lo, hi) whose input column oj*s + kj - p is in range.
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g, std::size_t kj) {
  const long pad = static_cast<long>(g.pad), s = static_cast<long>(g.stride);
  const long first = pad - static_cast<long>(kj);  // need oj*s >= first
  const long last = static_cast<long>(g.width) + pad - static_cast<long>(kj);  // oj*s < last
  const long lo = first <= 0 ? 0 : (first + s - 1) / s;
  const long hi = last <= 0 ? 0 : std::min<long>(static_cast<long>(g.out_w), (last + s - 1) / s);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

// col[(c*k*k + ki*k + kj), oi*out_w + oj] = img[c, oi*s+ki-p, oj*s+kj-p]
void im2col(const double* img, const ConvGeometry& g, double* col) {
  const std::size_t plane = g.out_h * g.out_w;
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* src = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((c * g.k + ki) * g.k + kj) * plane;
        const auto [lo, hi] = valid_cols(g, kj);
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          double* dst = row + oi * g.out_w;
          const long ii = static_cast<long>(oi * g.stride + ki) - pad;
          if (ii < 0 || ii >= static_cast<long>(g.height) || lo >= hi) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          std::fill_n(dst, lo, 0.0);
          std::fill(dst + hi, dst + g.out_w, 0.0);
          const double* line = src + ii * static_cast<long>(g.width) + static_cast<long>(kj) - pad;
          if (g.stride == 1) {
            std::copy(line + lo, line + hi, dst + lo);
          } else {
            for (std::size_t oj = lo; oj < hi; ++oj) dst[oj] = line[oj * g.stride];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back into the image, accumulating.
void col2im(const double* col, const ConvGeometry& g, double* img) {
  const std::size_t plane = g.out_h * g.out_w;
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* dst = img + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((c * g.k + ki) * g.k + kj) * plane;
        const auto [lo, hi] = valid_cols(g, kj);
        if (lo >= hi) continue;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - pad;
          if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
          double* line = dst + ii * static_cast<long>(g.width) + static_cast<long>(kj) - pad;
          const double* src = row + oi * g.out_w;
          if (g.stride == 1) {
            for (std::size_t oj = lo; oj < hi; ++oj) line[oj] += src[oj];
          } else {
            for (std::size_t oj = lo; oj < hi; ++oj) line[oj * g.stride] += src[oj];
          }
        }
      }
    }
  }
}

// Per-thread column buffers, reused across calls.
double* scratch(int slot, std::size_t n) {
  thread_local std::vector<double> buffers[2];
  std::vector<double>& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

bool is_pointwise(const ConvGeometry& g) {
  return g.k == 1 && g.stride == 1 && g.pad == 0;
}

void check_conv_args(const Tensor& input, const Tensor& kernel,
                     const Tensor& bias, std::size_t stride, const char* op) {
  require_rank(input, 4, op);
  require_rank(kernel, 4, op);
  if (stride == 0) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (kernel.dim(2) != kernel.dim(3)) {
    throw ConfigError(std::string(op) + ": kernel must be square, got " +
                      shape_str(kernel.shape()));
  }
  (void)bias;
}

void add_bias(std::vector<double>& out, std::size_t batch, std::size_t channels,
              std::size_t plane, const Tensor& bias, const char* op) {
  if (!bias.defined()) return;
  if (bias.numel() != channels) {
    throw ConfigError(std::string(op) + ": bias of shape " +
                      shape_str(bias.shape()) + " for " +
                      std::to_string(channels) + " channels");
  }
  const auto bv = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = out.data() + (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv[c];
    }
  }
}

void accumulate_bias_grad(const NodePtr& bn, std::span<const double> g,
                          std::size_t batch, std::size_t channels,
                          std::size_t plane) {
  if (!bn || !bn->requires_grad) return;
  auto gb = bn->grad_buffer();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = g.data() + (b * channels + c) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      gb[c] += acc;
    }
  }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                            std::size_t pad) {
  if (in + 2 * pad < k) {
    throw ConfigError("conv: extent " + std::to_string(in) + " + 2*" +
                      std::to_string(pad) + " smaller than kernel " +
                      std::to_string(k));
  }
  return (in + 2 * pad - k) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t pad) {
  check_conv_args(input, kernel, bias, stride, "conv2d");
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw ConfigError("conv2d: input " + shape_str(input.shape()) +
                      " vs kernel " + shape_str(kernel.shape()));
  }
  const ConvGeometry g{cin,
                       input.dim(2),
                       input.dim(3),
                       k,
                       stride,
                       pad,
                       conv_out_extent(input.dim(2), k, stride, pad),
                       conv_out_extent(input.dim(3), k, stride, pad)};
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t ck = cin * k * k;
  const std::size_t in_plane = cin * g.height * g.width;
  const bool pointwise = is_pointwise(g);

  const auto xv = input.data();
  const auto wv = kernel.data();
  std::vector<double> out(batch * cout * plane);
  double* col = pointwise ? nullptr : scratch(0, ck * plane);
  ConstMatMap wm(wv.data(), cout, ck);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* cols = xv.data() + b * in_plane;
    if (!pointwise) {
      im2col(cols, g, col);
      cols = col;
    }
    MatMap om(out.data() + b * cout * plane, cout, plane);
    om.noalias() = wm * ConstMatMap(cols, ck, plane);
  }
  add_bias(out, batch, cout, plane, bias, "conv2d");
  Tensor r = finish({batch, cout, g.out_h, g.out_w}, std::move(out), "conv2d");

  if (tracking({&input, &kernel, &bias})) {
    NodePtr xn = input.node();
    NodePtr kn = kernel.node();
    NodePtr bn = bias.defined() ? bias.node() : nullptr;
    attach(r, {&input, &kernel, &bias}, [=](std::span<const double> grad) {
      double* col = pointwise ? nullptr : scratch(0, ck * plane);
      double* dcol = pointwise ? nullptr : scratch(1, ck * plane);
      ConstMatMap wm(kn->value.data(), cout, ck);
      for (std::size_t b = 0; b < batch; ++b) {
        ConstMatMap gm(grad.data() + b * cout * plane, cout, plane);
        const double* cols = xn->value.data() + b * in_plane;
        if (kn->requires_grad) {
          if (!pointwise) {
            im2col(cols, g, col);
            cols = col;
          }
          MatMap gw(kn->grad_buffer().data(), cout, ck);
          gw.noalias() += gm * ConstMatMap(cols, ck, plane).transpose();
        }
        if (xn->requires_grad) {
          double* gx = xn->grad_buffer().data() + b * in_plane;
          if (pointwise) {
            MatMap(gx, ck, plane).noalias() += wm.transpose() * gm;
          } else {
            MatMap(dcol, ck, plane).noalias() = wm.transpose() * gm;
            col2im(dcol, g, gx);
          }
        }
      }
      accumulate_bias_grad(bn, grad, batch, cout, plane);
    });
  }
  return r;
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::size_t stride, std::size_t pad,
                        std::size_t output_pad) {
  check_conv_args(input, kernel, bias, stride, "conv2d_transpose");
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  const std::size_t cout = kernel.dim(1), k = kernel.dim(2);
  if (kernel.dim(0) != cin) {
    throw ConfigError("conv2d_transpose: input " + shape_str(input.shape()) +
                      " vs kernel " + shape_str(kernel.shape()));
  }
  if (output_pad >= stride && output_pad > 0) {
    throw ConfigError("conv2d_transpose: output_pad must be < stride");
  }
  const std::size_t in_h = input.dim(2), in_w = input.dim(3);
  const auto out_extent = [&](std::size_t in) {
    const long e = static_cast<long>((in - 1) * stride + k + output_pad) -
                   2 * static_cast<long>(pad);
    if (e <= 0) {
      throw ConfigError("conv2d_transpose: empty output for extent " +
                        std::to_string(in));
    }
    return static_cast<std::size_t>(e);
  };
  // The forward pass is the input-gradient of a conv2d that maps the output
  // grid back onto the input grid.
  const ConvGeometry g{cout, out_extent(in_h), out_extent(in_w), k, stride,
                       pad,  in_h,             in_w};
  const std::size_t plane = in_h * in_w;
  const std::size_t ck = cout * k * k;
  const std::size_t out_plane = g.height * g.width;
  const bool pointwise = is_pointwise(g);

  const auto xv = input.data();
  ConstMatMap wm(kernel.data().data(), cin, ck);
  std::vector<double> out(batch * cout * out_plane, 0.0);
  double* col = pointwise ? nullptr : scratch(0, ck * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    ConstMatMap xm(xv.data() + b * cin * plane, cin, plane);
    double* ob = out.data() + b * cout * out_plane;
    if (pointwise) {
      MatMap(ob, ck, plane).noalias() = wm.transpose() * xm;
    } else {
      MatMap(col, ck, plane).noalias() = wm.transpose() * xm;
      col2im(col, g, ob);
    }
  }
  add_bias(out, batch, cout, out_plane, bias, "conv2d_transpose");
  Tensor r = finish({batch, cout, g.height, g.width}, std::move(out),
                    "conv2d_transpose");

  if (tracking({&input, &kernel, &bias})) {
    NodePtr xn = input.node();
    NodePtr kn = kernel.node();
    NodePtr bn = bias.defined() ? bias.node() : nullptr;
    attach(r, {&input, &kernel, &bias}, [=](std::span<const double> grad) {
      double* gcol = pointwise ? nullptr : scratch(0, ck * plane);
      ConstMatMap wm(kn->value.data(), cin, ck);
      for (std::size_t b = 0; b < batch; ++b) {
        const double* gb = grad.data() + b * cout * out_plane;
        if (!pointwise) {
          im2col(gb, g, gcol);
          gb = gcol;
        }
        ConstMatMap gm(gb, ck, plane);
        if (xn->requires_grad) {
          MatMap gx(xn->grad_buffer().data() + b * cin * plane, cin, plane);
          gx.noalias() += wm * gm;
        }
        if (kn->requires_grad) {
          ConstMatMap xm(xn->value.data() + b * cin * plane, cin, plane);
          MatMap gw(kn->grad_buffer().data(), cin, ck);
          gw.noalias() += xm * gm.transpose();
        }
      }
      accumulate_bias_grad(bn, grad, batch, cout, out_plane);
    });
  }
  return r;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t groups = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  std::vector<double> out(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[g * plane + i];
    out[g] = acc / static_cast<double>(plane);
  }
  Tensor r = finish({x.dim(0), x.dim(1)}, std::move(out), "global_avg_pool");
  if (tracking({&x})) {
    NodePtr xn = x.node();
    attach(r, {&x}, [=](std::span<const double> g) {
      auto gx = xn->grad_buffer();
      const double scale = 1.0 / static_cast<double>(plane);
      for (std::size_t k = 0; k < groups; ++k) {
        for (std::size_t i = 0; i < plane; ++i) gx[k * plane + i] += g[k] * scale;
      }
    });
  }
  return r;
}

Tensor avg_pool2x2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2x2");
  const std::size_t groups = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ConfigError("avg_pool2x2: input too small");
  const auto xv = x.data();
  std::vector<double> out(groups * oh * ow);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = xv.data() + g * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double* p = src + 2 * i * w + 2 * j;
        out[(g * oh + i) * ow + j] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
    }
  }
  Tensor r = finish({x.dim(0), x.dim(1), oh, ow}, std::move(out), "avg_pool2x2");
  if (tracking({&x})) {
    NodePtr xn = x.node();
    attach(r, {&x}, [=](std::span<const double> grad) {
      auto gx = xn->grad_buffer();
      for (std::size_t g = 0; g < groups; ++g) {
        double* dst = gx.data() + g * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            const double v = 0.25 * grad[(g * oh + i) * ow + j];
            double* p = dst + 2 * i * w + 2 * j;
            p[0] += v;
            p[1] += v;
            p[w] += v;
            p[w + 1] += v;
          }
        }
      }
    });
  }
  return r;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const Tensor& bias) {
  require_rank(input, 2, "fully_connected");
  require_rank(weight, 2, "fully_connected");
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw ConfigError("fully_connected: input " + shape_str(input.shape()) +
                      " vs weight " + shape_str(weight.shape()));
  }
  std::vector<double> out(batch * cout);
  MatMap om(out.data(), batch, cout);
  om.noalias() = ConstMatMap(input.data().data(), batch, cin) *
                 ConstMatMap(weight.data().data(), cout, cin).transpose();
  add_bias(out, batch, cout, 1, bias, "fully_connected");
  Tensor r = finish({batch, cout}, std::move(out), "fully_connected");
  if (tracking({&input, &weight, &bias})) {
    NodePtr xn = input.node();
    NodePtr wn = weight.node();
    NodePtr bn = bias.defined() ? bias.node() : nullptr;
    attach(r, {&input, &weight, &bias}, [=](std::span<const double> g) {
      ConstMatMap gm(g.data(), batch, cout);
      if (xn->requires_grad) {
        MatMap(xn->grad_buffer().data(), batch, cin).noalias() +=
            gm * ConstMatMap(wn->value.data(), cout, cin);
      }
      if (wn->requires_grad) {
        MatMap(wn->grad_buffer().data(), cout, cin).noalias() +=
            gm.transpose() * ConstMatMap(xn->value.data(), batch, cin);
      }
      accumulate_bias_grad(bn, g, batch, cout, 1);
    });
  }
  return r;
}

Tensor gdn(const Tensor& x, const GdnParams& params) {
  require_rank(x, 4, "gdn");
  require_rank(params.beta, 1, "gdn");
  require_rank(params.gamma, 2, "gdn");
  const std::size_t c = x.dim(1);
  if (params.beta.dim(0) != c || params.gamma.dim(0) != c ||
      params.gamma.dim(1) != c) {
    throw ConfigError("gdn: input " + shape_str(x.shape()) + " vs beta " +
                      shape_str(params.beta.shape()) + ", gamma " +
                      shape_str(params.gamma.shape()));
  }
  const Tensor norm = sqrt(conv2d(square(x), reshape(params.gamma, {c, c, 1, 1}),
                                  params.beta, 1, 0));
  return params.inverse ? mul(x, norm) : div(x, norm);
}

}  // namespace edic::ops
