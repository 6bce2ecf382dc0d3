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

#include "xphrase/corpus.hpp"
#include "xphrase/log.hpp"

namespace xphrase::corpus {

void validate_example(const ExampleSentence& example, std::span<const TokenId> phrase_tokens) {
  const std::size_t n = example.tokens.size();
  if (example.span_start < 1 || example.span_start > example.span_end || example.span_end > n) {
    throw CorpusError("example span [" + std::to_string(example.span_start) + ", " +
                      std::to_string(example.span_end) + "] invalid for sentence of " + std::to_string(n) +
                      " tokens");
  }
  const std::size_t len = example.span_end - example.span_start + 1;
  if (len != phrase_tokens.size() ||
      !std::equal(phrase_tokens.begin(), phrase_tokens.end(), example.tokens.begin() + (example.span_start - 1))) {
    throw CorpusError("example span does not cover the phrase tokens");
  }
}

void validate_record(const PhrasePairRecord& record) {
  if (record.id.empty()) throw CorpusError("record has an empty id");
  for (const Phrase* p : {&record.source, &record.target}) {
    if (p->tokens.empty()) throw CorpusError("record " + record.id + ": phrase has no tokens");
  }
  const std::pair<const std::vector<ExampleSentence>*, const Phrase*> sides[] = {
      {&record.source_examples, &record.source}, {&record.target_examples, &record.target}};
  for (const auto& [examples, phrase] : sides) {
    if (examples->empty()) throw CorpusError("record " + record.id + ": no example sentences");
    if (examples->size() > kMaxExamples) {
      throw CorpusError("record " + record.id + ": more than " + std::to_string(kMaxExamples) + " examples");
    }
    for (const auto& ex : *examples) {
      try {
        validate_example(ex, phrase->tokens);
      } catch (const CorpusError& e) {
        throw CorpusError("record " + record.id + ": " + e.what());
      }
    }
  }
}

std::string source_phrase_id(std::string_view record_id) { return std::string(record_id) + "/src"; }
std::string target_phrase_id(std::string_view record_id) { return std::string(record_id) + "/tgt"; }

Phrase make_phrase(std::string id, std::string language, std::string surface, const Vocabulary& vocab) {
  Phrase p;
  p.id = std::move(id);
  p.language = std::move(language);
  p.tokens = vocab.encode(surface);
  p.surface = std::move(surface);
  return p;
}

std::vector<ExampleSentence> select_example_sentences(const Phrase& phrase, std::span<const std::string> sentences,
                                                      const Vocabulary& vocab, std::size_t cap) {
  if (cap < 1) throw CorpusError("select_example_sentences: cap must be at least 1");
  const auto needle = split_tokens(phrase.surface);
  const std::size_t min_chars = utf8_length(phrase.surface) + 10;
  std::vector<ExampleSentence> out;
  for (const auto& sentence : sentences) {
    if (out.size() >= cap) break;
    if (utf8_length(sentence) < min_chars) continue;
    std::vector<std::string> tokens;
    try {
      tokens = split_tokens(sentence);
    } catch (const CorpusError&) {
      continue;
    }
    if (tokens.size() < needle.size()) continue;
    const auto hit = std::search(tokens.begin(), tokens.end(), needle.begin(), needle.end());
    if (hit == tokens.end()) continue;
    ExampleSentence ex;
    ex.text = sentence;
    ex.tokens = vocab.encode_tokens(tokens);
    ex.span_start = static_cast<std::size_t>(hit - tokens.begin()) + 1;
    ex.span_end = ex.span_start + needle.size() - 1;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<PhrasePairRecord> build_corpus(std::span<const RawPhrasePair> pairs,
                                           std::span<const std::string> source_sentences,
                                           std::span<const std::string> target_sentences, Vocabulary& vocab,
                                           std::size_t cap, BuildStats* stats) {
  const auto kept = filter_phrase_pairs(pairs);
  auto grow = [&](std::string_view text) {
    try {
      for (const auto& t : split_tokens(text)) vocab.add(t);
    } catch (const CorpusError&) {
    }
  };
  for (const auto& p : kept) {
    grow(p.source);
    grow(p.target);
  }
  for (const auto& s : source_sentences) grow(s);
  for (const auto& s : target_sentences) grow(s);

  std::vector<PhrasePairRecord> records;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    PhrasePairRecord r;
    r.id = "p" + std::to_string(i);
    r.source = make_phrase(source_phrase_id(r.id), kept[i].source_language, kept[i].source, vocab);
    r.target = make_phrase(target_phrase_id(r.id), kept[i].target_language, kept[i].target, vocab);
    r.source_examples = select_example_sentences(r.source, source_sentences, vocab, cap);
    r.target_examples = select_example_sentences(r.target, target_sentences, vocab, cap);
    if (r.source_examples.empty() || r.target_examples.empty()) {
      log_warn("dropping phrase pair '" + kept[i].source + "' / '" + kept[i].target +
               "': no usable example sentence");
      ++dropped;
      continue;
    }
    records.push_back(std::move(r));
  }
  if (stats != nullptr) {
    stats->input_pairs = pairs.size();
    stats->filtered_pairs = pairs.size() - kept.size();
    stats->dropped_without_examples = dropped;
  }
  return records;
}

}  // namespace xphrase::corpus
