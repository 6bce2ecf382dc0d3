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

#include "xphrase/contrast.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace xphrase::contrast {

namespace {

void require_unit_rows(const char* op, const char* what, const Tensor& t) {
  const std::size_t n = t.cols();
  const auto v = t.values();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < n; ++c) ss += v[r * n + c] * v[r * n + c];
    if (std::abs(std::sqrt(ss) - 1.0) > kUnitTolerance) {
      throw ShapeError(op, std::string(what) + " row " + std::to_string(r) + " has norm " + std::to_string(std::sqrt(ss)));
    }
  }
}

}  // namespace

void ContrastConfig::validate(std::size_t batch_size) const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("contrast: temperature must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("contrast: momentum must lie in [0, 1]");
  if (moco_queue_length != 0 && moco_queue_length < batch_size) {
    throw std::invalid_argument("contrast: queue length " + std::to_string(moco_queue_length) +
                                " is smaller than the batch size " + std::to_string(batch_size));
  }
}

Tensor directional_loss(const Tensor& p, const Tensor& q_star, double temperature) {
  if (p.shape().size() != 2 || q_star.shape().size() != 2) throw ShapeError("directional_loss", p.shape(), q_star.shape());
  if (p.rows() == 0) throw ShapeError("directional_loss", "empty batch");
  if (p.cols() != q_star.cols() || q_star.rows() < p.rows()) throw ShapeError("directional_loss", p.shape(), q_star.shape());
  if (!(temperature > 0.0)) throw std::invalid_argument("directional_loss: temperature must be positive");
  require_unit_rows("directional_loss", "P", p);
  require_unit_rows("directional_loss", "Q*", q_star);
  std::vector<std::size_t> targets(p.rows());
  std::iota(targets.begin(), targets.end(), 0);
  return softmax_cross_entropy(scale(matmul_nt(p, q_star), 1.0 / temperature), targets);
}

Tensor xpco_loss(const Tensor& p, const Tensor& q_star, const Tensor& q, const Tensor& p_star, double temperature) {
  return add(directional_loss(p, q_star, temperature), directional_loss(q, p_star, temperature));
}

void update_momentum(encoder::PhraseEncoder& momentum, const encoder::PhraseEncoder& online, double mu) {
  if (!(momentum.config() == online.config())) throw std::invalid_argument("update_momentum: encoder configs differ");
  momentum_blend(momentum.parameters(), online.parameters(), mu);
}

NegativeQueue::NegativeQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("NegativeQueue: capacity must be positive");
}

void NegativeQueue::push(const Tensor& reps) {
  require_unit_rows("NegativeQueue::push", "entry", reps);
  const std::size_t d = reps.cols();
  if (!entries_.empty() && entries_.front().size() != d) {
    throw ShapeError("NegativeQueue::push", "width " + std::to_string(d) + " does not match queued width " +
                                                std::to_string(entries_.front().size()));
  }
  const auto v = reps.values();
  for (std::size_t r = 0; r < reps.rows(); ++r) {
    entries_.emplace_back(v.begin() + r * d, v.begin() + (r + 1) * d);
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

Tensor NegativeQueue::negatives(const Tensor& positives) const {
  if (entries_.empty()) return positives;
  const std::size_t d = positives.cols();
  if (entries_.front().size() != d) throw ShapeError("NegativeQueue::negatives", "queue width does not match positives");
  std::vector<double> extra;
  extra.reserve(entries_.size() * d);
  for (const auto& e : entries_) extra.insert(extra.end(), e.begin(), e.end());
  return concat_rows(positives, Tensor::from({entries_.size(), d}, std::move(extra)));
}

}  // namespace xphrase::contrast
