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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xphrase/encoder.hpp"
#include "xphrase/retrieval.hpp"
#include "xphrase/tensor.hpp"

namespace xphrase::baselines {

inline constexpr std::uint32_t kMapVersion = 1;

// Square orthogonal matrix, row-major. Row vectors map as x -> x W.
struct OrthogonalMap {
  std::size_t dim = 0;
  std::vector<double> matrix;

  static OrthogonalMap identity(std::size_t d);
  std::vector<double> apply(std::span<const double> x) const;
  Tensor apply(const Tensor& rows) const;
  // Frobenius norm of W^T W - I.
  double orthogonality_error() const;
};

// A = U diag(s) V^T for square row-major A, by one-sided Jacobi rotations.
// U is completed to an orthonormal basis when A is rank deficient.
struct Svd {
  std::size_t dim = 0;
  std::vector<double> u, s, v;
};
Svd jacobi_svd(std::span<const double> a, std::size_t d);

// argmin over orthogonal W of |source W - target|_F, rows paired.
// Warns (and still returns an orthogonal W) when source^T target is rank deficient.
OrthogonalMap fit_orthogonal_map(const Tensor& source, const Tensor& target);

double residual(const OrthogonalMap& w, const Tensor& source, const Tensor& target);

// Normalized mean of pooled hidden states at `layer` (default: middle layer), no projection.
Tensor cse_represent(const encoder::PhraseEncoder& frozen,
                     const std::vector<std::vector<corpus::ExampleSentence>>& examples,
                     std::optional<std::size_t> layer = std::nullopt,
                     std::size_t max_sentences = corpus::kMaxExamples);

// Maps index rows through W; rows stay unit norm.
retrieval::PhraseIndex map_index(const OrthogonalMap& w, const retrieval::PhraseIndex& index);

std::vector<std::uint8_t> serialize_map(const OrthogonalMap& w);
OrthogonalMap deserialize_map(std::span<const std::uint8_t> bytes);
void save_map(const OrthogonalMap& w, const std::string& path);
OrthogonalMap load_map(const std::string& path);

}  // namespace xphrase::baselines
