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
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xphrase::corpus {

using TokenId = std::uint32_t;
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr std::size_t kMaxExamples = 32;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Splits on ASCII whitespace and lowercases ASCII letters. Characters from
// scripts written without word boundaries (CJK ideographs, kana, hangul)
// become one token each. Throws CorpusError when no token remains.
std::vector<std::string> split_tokens(std::string_view text);

// Unicode code points in a UTF-8 string (invalid bytes count as one each).
std::size_t utf8_length(std::string_view text);

class Vocabulary {
 public:
  // Starts with the reserved <pad> (0) and <unk> (1) entries.
  Vocabulary();

  // Reserved entries first, then `tokens` in the given order (duplicates are
  // ignored).
  static Vocabulary from_tokens(std::span<const std::string> tokens);

  TokenId add(std::string_view token);
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<TokenId> encode_tokens(std::span<const std::string> tokens) const;

  // One token per line in id order, reserved entries included.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct Phrase {
  std::string id;
  std::string language;
  std::string surface;
  std::vector<TokenId> tokens;

  bool operator==(const Phrase&) const = default;
};

// A sentence containing a phrase occurrence at 1-based inclusive
// [span_start, span_end].
struct ExampleSentence {
  std::string text;
  std::vector<TokenId> tokens;
  std::size_t span_start = 0;
  std::size_t span_end = 0;

  bool operator==(const ExampleSentence&) const = default;
};

struct PhrasePairRecord {
  std::string id;
  Phrase source;
  Phrase target;
  std::vector<ExampleSentence> source_examples;
  std::vector<ExampleSentence> target_examples;

  bool operator==(const PhrasePairRecord&) const = default;
};

// Throws CorpusError describing the first violated invariant.
void validate_example(const ExampleSentence& example, std::span<const TokenId> phrase_tokens);
void validate_record(const PhrasePairRecord& record);

// Longest-common-subsequence based scores; precision = LCS/|candidate|,
// recall = LCS/|reference|, f1 their harmonic mean (0 when LCS = 0).
struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

template <typename T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : (prev[j] > cur[j - 1] ? prev[j] : cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename T>
RougeScore rouge_l_scores(std::span<const T> candidate, std::span<const T> reference) {
  if (candidate.empty() || reference.empty()) throw CorpusError("rouge_l: empty token sequence");
  const std::size_t lcs = lcs_length(candidate, reference);
  RougeScore s;
  if (lcs == 0) return s;
  s.precision = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  s.recall = static_cast<double>(lcs) / static_cast<double>(reference.size());
  s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

template <typename T>
double rouge_l(std::span<const T> candidate, std::span<const T> reference) {
  return rouge_l_scores(candidate, reference).f1;
}

double rouge_l(std::string_view candidate, std::string_view reference);

struct RawPhrasePair {
  std::string source_language;
  std::string source;
  std::string target_language;
  std::string target;

  bool operator==(const RawPhrasePair&) const = default;
};

inline constexpr double kRougeFilterThreshold = 0.5;

// Digits with separators, ISO dates, years, decades and month-name dates.
bool is_time_expression(std::string_view surface);

// Drops near-copies (ROUGE-L above the threshold in both directions) and
// time expressions. Order of the survivors is preserved.
std::vector<RawPhrasePair> filter_phrase_pairs(std::span<const RawPhrasePair> pairs);

// Sentences containing the phrase's tokens contiguously and at least 10
// characters longer than the phrase, first `cap` in corpus order. The span
// marks the first occurrence.
std::vector<ExampleSentence> select_example_sentences(const Phrase& phrase, std::span<const std::string> sentences,
                                                      const Vocabulary& vocab, std::size_t cap = kMaxExamples);

// Phrase ids within a record: "<record>/src" and "<record>/tgt".
std::string source_phrase_id(std::string_view record_id);
std::string target_phrase_id(std::string_view record_id);
Phrase make_phrase(std::string id, std::string language, std::string surface, const Vocabulary& vocab);

struct BuildStats {
  std::size_t input_pairs = 0;
  std::size_t filtered_pairs = 0;
  std::size_t dropped_without_examples = 0;
};

// Filters raw pairs, grows `vocab` with every token of the pairs and both
// sentence pools, then attaches example sentences. Pairs where either side
// has no usable sentence are dropped with a warning.
std::vector<PhrasePairRecord> build_corpus(std::span<const RawPhrasePair> pairs,
                                           std::span<const std::string> source_sentences,
                                           std::span<const std::string> target_sentences, Vocabulary& vocab,
                                           std::size_t cap = kMaxExamples, BuildStats* stats = nullptr);

// Tab-separated record lines; see save_corpus for the layout.
void save_corpus(std::span<const PhrasePairRecord> records, const std::string& path);
std::string format_record(const PhrasePairRecord& record);
std::vector<PhrasePairRecord> load_corpus(const std::string& path, const Vocabulary& vocab);
std::vector<PhrasePairRecord> parse_corpus(std::string_view text, const Vocabulary& vocab);

// "<dir of corpus>/vocab.txt"
std::string sidecar_vocabulary_path(const std::string& corpus_path);

std::vector<std::string> read_lines(const std::string& path);

}  // namespace xphrase::corpus
