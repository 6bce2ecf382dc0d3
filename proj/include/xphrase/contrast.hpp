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
#include <deque>
#include <vector>

#include "xphrase/encoder.hpp"
#include "xphrase/tensor.hpp"

namespace xphrase::contrast {

inline constexpr std::size_t kDefaultQueueCapacity = 1024;
inline constexpr double kUnitTolerance = 1e-6;

struct ContrastConfig {
  double temperature = 0.05;
  double momentum = 0.999;
  bool use_momentum_encoder = true;
  bool use_projection_head = true;
  std::size_t moco_queue_length = 0;  // 0 disables the queue

  void validate(std::size_t batch_size) const;
};

// -sum_i log softmax_j(p_i . q*_j / T)[i]. Rows N.. of q_star are extra negatives.
// Gradients reach q_star only if the caller passes a tensor on the tape.
Tensor directional_loss(const Tensor& p, const Tensor& q_star, double temperature);

// Both directions: P against Q*, and Q against P*.
Tensor xpco_loss(const Tensor& p, const Tensor& q_star, const Tensor& q, const Tensor& p_star, double temperature);

void update_momentum(encoder::PhraseEncoder& momentum, const encoder::PhraseEncoder& online, double mu);

// Fixed-capacity FIFO of unit vectors.
class NegativeQueue {
 public:
  explicit NegativeQueue(std::size_t capacity = kDefaultQueueCapacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<std::vector<double>>& entries() const { return entries_; }

  // Appends every row of `reps` (values only); oldest entries are evicted first.
  void push(const Tensor& reps);
  void clear() { entries_.clear(); }

  // The current positives followed by the queued entries, oldest first.
  Tensor negatives(const Tensor& positives) const;

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> entries_;
};

}  // namespace xphrase::contrast
