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

#include <cmath>

#include "xphrase/tensor.hpp"

namespace xphrase {

void zero_grad(ParameterList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

ParameterList clone_parameters(const ParameterList& params, bool requires_grad) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone(requires_grad)});
  return out;
}

AdamState make_adam_state(const ParameterList& params, const AdamConfig& config) {
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (config.warmup_fraction < 0.0 || config.warmup_fraction > 1.0) {
    throw std::invalid_argument("adam: warmup_fraction must lie in [0, 1]");
  }
  if (config.total_steps == 0) throw std::invalid_argument("adam: total_steps must be positive");
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.tensor.numel(), 0.0);
    state.second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
  return state;
}

std::uint64_t warmup_steps(const AdamConfig& config) {
  return static_cast<std::uint64_t>(
      std::ceil(config.warmup_fraction * static_cast<double>(config.total_steps) - 1e-9));
}

double scheduled_learning_rate(const AdamConfig& config, std::uint64_t step) {
  const std::uint64_t total = config.total_steps;
  const std::uint64_t warm = warmup_steps(config);
  if (step >= total) return 0.0;
  if (warm > 0 && step <= warm) {
    return config.learning_rate * static_cast<double>(step) / static_cast<double>(warm);
  }
  return config.learning_rate * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

double adam_step(ParameterList& params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) {
      throw GradError("adam: parameter '" + params[i].name + "' has no gradient");
    }
    if (state.first_moment[i].size() != params[i].tensor.numel()) {
      throw ShapeError("adam", "moment size mismatch for parameter '" + params[i].name + "'");
    }
  }
  const AdamConfig& c = state.config;
  ++state.step_count;
  const double lr = scheduled_learning_rate(c, state.step_count);
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_values();
    const auto grad = params[i].tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
  return lr;
}

void momentum_blend(ParameterList& target, const ParameterList& source, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("momentum_blend: mu must lie in [0, 1]");
  if (target.size() != source.size()) {
    throw ShapeError("momentum_blend", "parameter lists differ in length (" + std::to_string(target.size()) +
                                           " vs " + std::to_string(source.size()) + ")");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].tensor.shape() != source[i].tensor.shape()) {
      throw ShapeError("momentum_blend(" + target[i].name + ")", target[i].tensor.shape(),
                       source[i].tensor.shape());
    }
  }
  const double keep = 1.0 - mu;
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto dst = target[i].tensor.mutable_values();
    const auto src = source[i].tensor.values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = mu * dst[j] + keep * src[j];
  }
}

}  // namespace xphrase
