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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace edic {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the dynamically recorded gradient tape. Results of ops that
// touch a requires_grad input keep their parents alive until backward()
// releases them.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const double>)> backward;

  // Zero-initialized on first use.
  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with optional participation in reverse
/// mode differentiation. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Write access for parameters and freshly built tensors. Mutating a tensor
  // that is already recorded on a tape invalidates its gradients.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  // Internal handle used by ops.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Building block for fused ops defined outside ops.cpp. Checks the values
/// for non-finite entries (NumericError naming `op`). When recording is on and
/// any input requires grad, `backward` is attached; it receives the output
/// gradient and must accumulate into the inputs' grad buffers itself.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs,
                      std::function<void(std::span<const double>)> backward);

/// Runs reverse accumulation from a scalar loss. Leaf tensors with
/// requires_grad accumulate into their grad buffers; the interior tape is
/// released afterwards.
void backward(const Tensor& loss);

}  // namespace edic
