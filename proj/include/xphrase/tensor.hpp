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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xphrase/rng.hpp"

namespace xphrase {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Raised by any op whose operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& detail);
};

// Raised for misuse of the gradient tape (non-scalar loss, double backward...).
class GradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty = absent
  bool requires_grad = false;
  bool is_leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

}  // namespace detail

// Dense row-major float64 array participating in reverse-mode autodiff.
//
// Tensor is a shared handle: copies alias the same storage, like a graph
// node reference. Ops return fresh tensors; when gradient recording is
// enabled and any operand requires grad, the result remembers how to push
// its gradient back to its operands.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only

  std::span<const double> values() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  // Same values, no tape participation.
  Tensor detach() const;
  // Deep copy of values (and requires_grad flag) into a new leaf.
  Tensor clone(bool requires_grad) const;

  // Reverse pass from this scalar. Releases the recorded graph afterwards;
  // a second call on the same loss throws GradError.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

void backward(const Tensor& loss);

// Gradient recording is on by default, per thread.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- Forward ops -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [M,K]x[K,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M,K]x[N,K]^T
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// [M,N] + [N] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor l2_normalize_rows(const Tensor& a);
// axis 0 -> [N], axis 1 -> [M] for a 2-D input.
Tensor mean_axis(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double epsilon = 1e-5);
// Inverted dropout; identity when rate == 0 or rng == nullptr.
Tensor dropout(const Tensor& x, double rate, Rng* rng);

// Sum over rows of -log softmax(logits[i])[targets[i]].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// A contiguous block of rows [offset, offset + length) attending only to
// itself (one sentence in a concatenated batch).
struct Segment {
  std::size_t offset;
  std::size_t length;
};

// Scaled dot-product attention, per segment and head, over [T, H] inputs.
Tensor segmented_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           std::span<const Segment> segments, std::size_t num_heads);

struct WeightedRow {
  std::size_t row;
  double weight;
};
// out[p] = sum_j pools[p][j].weight * x[pools[p][j].row].
Tensor pool_rows(const Tensor& x, const std::vector<std::vector<WeightedRow>>& pools);

// ---- Parameters, optimizer, momentum ---------------------------------------

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

void zero_grad(ParameterList& params);
std::size_t parameter_count(const ParameterList& params);
ParameterList clone_parameters(const ParameterList& params, bool requires_grad);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double warmup_fraction = 0.01;
  std::uint64_t total_steps = 1;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam_state(const ParameterList& params, const AdamConfig& config);
std::uint64_t warmup_steps(const AdamConfig& config);
// Linear warmup to the peak learning rate, then linear decay to zero at
// total_steps. `step` is 1-based.
double scheduled_learning_rate(const AdamConfig& config, std::uint64_t step);
// Bias-corrected Adam update; returns the learning rate used.
double adam_step(ParameterList& params, AdamState& state);

// target = mu * target + (1 - mu) * source, outside the tape.
void momentum_blend(ParameterList& target, const ParameterList& source, double mu);

// ---- Checkpoint container ---------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Entries for each parameter under `prefix + name`.
void append_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterList& params);
// Copies values into existing, shape-matched parameters.
void restore_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterList& params);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace xphrase
