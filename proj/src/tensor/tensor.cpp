// Copyright (c) 2026 The xphrase Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "xphrase/tensor.hpp"

namespace xphrase {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": " + detail) {}

namespace {

thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor", "dimensions must be positive, got " + shape_string(shape));
  }
  if (shape.empty()) throw ShapeError("tensor", "shape must have at least one dimension");
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor", "value count " + std::to_string(values.size()) +
                                   " does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

namespace {
const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw std::logic_error("use of an undefined tensor");
  return *node;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(node_).shape; }
std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("dim", "axis out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::rows() const {
  if (shape().size() != 2) throw ShapeError("rows", "expected 2-D tensor, got " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (shape().size() != 2) throw ShapeError("cols", "expected 2-D tensor, got " + shape_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return checked(node_).value; }
std::span<double> Tensor::mutable_values() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", "tensor is not a scalar: " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
bool Tensor::is_leaf() const { return checked(node_).is_leaf; }
bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::clear_grad() {
  checked(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(shape(), node_->value, false));
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(make_leaf(shape(), node_->value, requires_grad));
}

void Tensor::backward() const { xphrase::backward(*this); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GradError("backward: undefined loss");
  auto root = loss.node();
  if (root->released) {
    throw GradError("backward: graph already consumed; run the forward pass again");
  }
  if (root->value.size() != 1) {
    throw GradError("backward: loss must be a scalar, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) throw GradError("backward: loss does not require grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (detail::Node* node : order) {
    if (!node->is_leaf) {
      node->grad.assign(node->value.size(), 0.0);
    } else if (node->grad.empty()) {
      node->grad.assign(node->value.size(), 0.0);
    }
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
  }
  for (detail::Node* node : order) {
    if (node->is_leaf) continue;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->released = true;
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace xphrase
