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

#include "xphrase/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "xphrase/bytes.hpp"
#include "xphrase/kernels.hpp"
#include "xphrase/parallel.hpp"

// Index file (little-endian):
//   magic "XPHRINDX" | u32 version | u64 fingerprint | u64 rows | u64 dim
//   f64 values[rows * dim] | per row: u32 id_len | id bytes

namespace xphrase::retrieval {

namespace {

constexpr char kMagic[8] = {'X', 'P', 'H', 'R', 'I', 'N', 'D', 'X'};
constexpr std::size_t kScanChunk = 256;

bool better(double sa, std::size_t ia, double sb, std::size_t ib) { return sa > sb || (sa == sb && ia < ib); }

void check_unit_rows(std::span<const double> values, std::size_t dim, const char* what) {
  const auto& kt = kernels::active();
  for (std::size_t r = 0; r * dim < values.size(); ++r) {
    const double n = std::sqrt(kt.sum_squares(values.data() + r * dim, dim));
    if (!(std::abs(n - 1.0) <= kRowTolerance)) {
      throw RetrievalError(std::string(what) + ": row " + std::to_string(r) + " has norm " + std::to_string(n));
    }
  }
}

}  // namespace

void PhraseIndex::validate() const {
  if (dim == 0) throw RetrievalError("index: zero dimension");
  if (matrix.size() != ids.size() * dim) throw RetrievalError("index: matrix does not match the id table");
  check_unit_rows(matrix, dim, "index");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw RetrievalError("index: duplicate id '" + id + "'");
}

std::optional<std::size_t> PhraseIndex::find(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

std::uint64_t encoder_fingerprint(const encoder::PhraseEncoder& enc) {
  std::uint64_t h = fnv1a64(enc.config().to_text());
  for (const auto& p : enc.parameters()) {
    h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(p.name.data()), p.name.size()), h);
    const auto v = p.tensor.values();
    h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size_bytes()), h);
  }
  return h;
}

Tensor represent_all(const encoder::PhraseEncoder& enc, const std::vector<std::vector<corpus::ExampleSentence>>& examples,
                     const IndexOptions& options) {
  if (examples.empty()) throw RetrievalError("index: no phrases");
  if (options.max_sentences == 0) throw RetrievalError("index: max_sentences must be positive");
  NoGradGuard no_grad;
  encoder::RepresentOptions ropts;
  ropts.use_projection = options.use_projection;
  ropts.layer = options.layer;
  const std::size_t step = std::max<std::size_t>(1, options.phrases_per_batch);
  std::vector<double> out;
  std::size_t dim = 0;
  for (std::size_t b = 0; b < examples.size(); b += step) {
    std::vector<encoder::ExampleSet> sets;
    for (std::size_t i = b; i < std::min(examples.size(), b + step); ++i) {
      if (examples[i].empty()) throw RetrievalError("index: phrase " + std::to_string(i) + " has no example sentences");
      encoder::ExampleSet set;
      for (std::size_t k = 0; k < std::min(options.max_sentences, examples[i].size()); ++k) set.push_back(&examples[i][k]);
      sets.push_back(std::move(set));
    }
    const Tensor p = encoder::represent_batch(enc, sets, ropts).p;
    dim = p.cols();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return Tensor::from({examples.size(), dim}, std::move(out));
}

PhraseIndex index_from_rows(const std::vector<std::string>& ids, const Tensor& rows, std::uint64_t fingerprint) {
  if (rows.shape().size() != 2 || rows.rows() != ids.size()) {
    throw RetrievalError("index: " + std::to_string(ids.size()) + " ids for rows of shape " + shape_string(rows.shape()));
  }
  PhraseIndex index;
  index.dim = rows.cols();
  index.matrix.assign(rows.values().begin(), rows.values().end());
  index.ids = ids;
  index.fingerprint = fingerprint;
  index.validate();
  return index;
}

PhraseIndex build_index(const encoder::PhraseEncoder& enc, const std::vector<std::string>& ids,
                        const std::vector<std::vector<corpus::ExampleSentence>>& examples, const IndexOptions& options) {
  if (ids.size() != examples.size()) throw RetrievalError("index: ids and example lists differ in length");
  return index_from_rows(ids, represent_all(enc, examples, options), encoder_fingerprint(enc));
}

void check_fingerprint(const PhraseIndex& index, const encoder::PhraseEncoder& enc) {
  if (index.fingerprint != encoder_fingerprint(enc)) {
    throw RetrievalError("index: built by a different encoder (fingerprint mismatch)");
  }
}

RetrievalResult query(const PhraseIndex& index, std::span<const double> q, std::size_t k, const std::string& query_id) {
  if (index.size() == 0) throw RetrievalError("query: empty index");
  if (k == 0) throw RetrievalError("query: k must be at least 1");
  if (q.size() != index.dim) {
    throw RetrievalError("query: vector of width " + std::to_string(q.size()) + " for index of width " + std::to_string(index.dim));
  }
  check_unit_rows(q, q.size(), "query");
  const std::size_t n = index.size();
  std::vector<double> scores(n);
  const auto& kt = kernels::active();
  parallel_for(n, kScanChunk, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) scores[i] = kt.dot(index.matrix.data() + i * index.dim, q.data(), index.dim);
  });
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return better(scores[a], a, scores[b], b); });
  RetrievalResult out;
  out.query_id = query_id;
  for (std::size_t r = 0; r < k; ++r) out.ranked.push_back({order[r], index.ids[order[r]], scores[order[r]]});
  return out;
}

std::vector<std::size_t> top1(const PhraseIndex& index, const Tensor& queries) {
  if (index.size() == 0) throw RetrievalError("query: empty index");
  if (queries.shape().size() != 2 || queries.cols() != index.dim) {
    throw RetrievalError("query: queries of shape " + shape_string(queries.shape()) + " for index of width " +
                         std::to_string(index.dim));
  }
  check_unit_rows(queries.values(), index.dim, "query");
  const auto& kt = kernels::active();
  const double* Q = queries.values().data();
  std::vector<std::size_t> best(queries.rows());
  parallel_for(queries.rows(), 1, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      std::size_t arg = 0;
      double top = -INFINITY;
      for (std::size_t i = 0; i < index.size(); ++i) {
        const double s = kt.dot(index.matrix.data() + i * index.dim, Q + r * index.dim, index.dim);
        if (better(s, i, top, arg)) top = s, arg = i;
      }
      best[r] = arg;
    }
  });
  return best;
}

double accuracy_at_1(const PhraseIndex& index, const Tensor& queries, const std::vector<std::string>& gold_ids) {
  if (queries.shape().size() != 2 || queries.rows() != gold_ids.size()) {
    throw RetrievalError("accuracy: " + std::to_string(gold_ids.size()) + " gold ids for queries of shape " +
                         shape_string(queries.shape()));
  }
  if (gold_ids.empty()) throw RetrievalError("accuracy: no queries");
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < index.size(); ++i) position.emplace(index.ids[i], i);
  std::vector<std::size_t> gold;
  for (const auto& id : gold_ids) {
    const auto it = position.find(id);
    if (it == position.end()) throw RetrievalError("accuracy: gold id '" + id + "' is not in the index");
    gold.push_back(it->second);
  }
  const auto best = top1(index, queries);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < best.size(); ++r) hits += best[r] == gold[r];
  return static_cast<double>(hits) / static_cast<double>(best.size());
}

std::vector<std::uint8_t> serialize_index(const PhraseIndex& index) {
  index.validate();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  bytes::put<std::uint32_t>(out, kIndexVersion);
  bytes::put<std::uint64_t>(out, index.fingerprint);
  bytes::put<std::uint64_t>(out, index.size());
  bytes::put<std::uint64_t>(out, index.dim);
  bytes::put_doubles(out, index.matrix);
  for (const auto& id : index.ids) {
    bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    bytes::put_string(out, id);
  }
  return out;
}

PhraseIndex deserialize_index(std::span<const std::uint8_t> data) {
  bytes::Reader in(data, "index");
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) in.fail("bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kIndexVersion) in.fail("unsupported version " + std::to_string(version));
  PhraseIndex index;
  index.fingerprint = in.get<std::uint64_t>();
  const auto rows = in.get<std::uint64_t>();
  index.dim = in.get<std::uint64_t>();
  if (index.dim == 0 || rows > in.remaining() / (index.dim * sizeof(double))) in.fail("truncated data");
  index.matrix.resize(rows * index.dim);
  in.get_doubles(index.matrix.data(), index.matrix.size());
  for (std::uint64_t r = 0; r < rows; ++r) index.ids.push_back(in.get_string(in.get<std::uint32_t>()));
  if (!in.done()) in.fail("trailing bytes");
  index.validate();
  return index;
}

void save_index(const PhraseIndex& index, const std::string& path) {
  bytes::write_file(path, serialize_index(index), "index");
}

PhraseIndex load_index(const std::string& path) { return deserialize_index(bytes::read_file(path, "index")); }

}  // namespace xphrase::retrieval
