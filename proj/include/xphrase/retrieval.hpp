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
#include <stdexcept>
#include <string>
#include <vector>

#include "xphrase/encoder.hpp"
#include "xphrase/tensor.hpp"

namespace xphrase::retrieval {

inline constexpr std::uint32_t kIndexVersion = 1;
inline constexpr double kRowTolerance = 1e-6;

class RetrievalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major matrix of unit rows with one id per row.
struct PhraseIndex {
  std::size_t dim = 0;
  std::vector<double> matrix;
  std::vector<std::string> ids;
  std::uint64_t fingerprint = 0;

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {matrix.data() + i * dim, dim}; }
  // Throws unless rows are unit norm and ids are unique and aligned.
  void validate() const;
  std::optional<std::size_t> find(const std::string& id) const;
};

struct ScoredCandidate {
  std::size_t index = 0;
  std::string id;
  double score = 0.0;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<ScoredCandidate> ranked;  // descending score, ties by ascending index
};

// Hash of the encoder config and every parameter value.
std::uint64_t encoder_fingerprint(const encoder::PhraseEncoder& enc);

struct IndexOptions {
  std::size_t max_sentences = corpus::kMaxExamples;  // first n examples of each phrase
  bool use_projection = true;
  std::optional<std::size_t> layer;
  std::size_t phrases_per_batch = 64;
};

// Eval-mode representations of each phrase from up to max_sentences examples.
Tensor represent_all(const encoder::PhraseEncoder& enc, const std::vector<std::vector<corpus::ExampleSentence>>& examples,
                     const IndexOptions& options = {});

PhraseIndex build_index(const encoder::PhraseEncoder& enc, const std::vector<std::string>& ids,
                        const std::vector<std::vector<corpus::ExampleSentence>>& examples,
                        const IndexOptions& options = {});

// Wraps precomputed rows [n, d]; rows must already be unit norm.
PhraseIndex index_from_rows(const std::vector<std::string>& ids, const Tensor& rows, std::uint64_t fingerprint = 0);

void check_fingerprint(const PhraseIndex& index, const encoder::PhraseEncoder& enc);

// Exact top-k by inner product over a sharded full scan.
RetrievalResult query(const PhraseIndex& index, std::span<const double> q, std::size_t k,
                      const std::string& query_id = {});

// Rank-1 index for every row of `queries`.
std::vector<std::size_t> top1(const PhraseIndex& index, const Tensor& queries);

// Fraction of query rows whose rank-1 id equals the gold id.
double accuracy_at_1(const PhraseIndex& index, const Tensor& queries, const std::vector<std::string>& gold_ids);

std::vector<std::uint8_t> serialize_index(const PhraseIndex& index);
PhraseIndex deserialize_index(std::span<const std::uint8_t> bytes);
void save_index(const PhraseIndex& index, const std::string& path);
PhraseIndex load_index(const std::string& path);

}  // namespace xphrase::retrieval
