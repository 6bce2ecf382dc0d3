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
#include <string>
#include <vector>

#include "xphrase/corpus.hpp"

// Cipher languages with known gold phrase pairs.
//
// A base vocabulary is split into phrase words, topic words, general words
// and topic anchors. Every language renders a base word w as its own surface
// "<prefix><pi(w)>" for a language-specific permutation pi (identity for the
// first language). Anchors keep a single surface shared by all languages.
// Each phrase has a topic; its example sentences are drawn independently per
// language from that topic's context distribution, so they are never parallel.
namespace xphrase::synth {

struct SyntheticOptions {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 400;
  std::size_t n_pairs = 500;
  std::size_t sentences_per_phrase = 8;
  std::size_t num_languages = 3;
  // Phrases come in adjacent groups of `ambiguity_group` with identical
  // tokens and pairwise distinct topics.
  bool ambiguous = false;
  std::size_t ambiguity_group = 2;
  double phrase_word_share = 0.15;  // of the base vocabulary
  double anchor_rate = 0.4;         // per context token
  double topic_rate = 0.4;          // per context token; the rest are general words
};

struct BaseVocabulary {
  std::size_t num_topics = 0;
  std::vector<std::size_t> anchors;        // anchors[t * anchors_per_topic + a]
  std::vector<std::size_t> topic_words;    // topic_words[t * words_per_topic + i]
  std::vector<std::size_t> general_words;
  std::vector<std::size_t> phrase_words;
  std::size_t anchors_per_topic = 0;
  std::size_t words_per_topic = 0;
};

struct SyntheticLanguage {
  std::string tag;
  // permutation[w] = base index rendered for base word w; anchors are fixed points.
  std::vector<std::size_t> permutation;
  std::vector<corpus::Phrase> phrases;
  std::vector<std::vector<corpus::ExampleSentence>> examples;
};

struct SyntheticCorpus {
  SyntheticOptions options;
  BaseVocabulary base;
  corpus::Vocabulary vocab;  // shared by every language
  std::vector<std::size_t> topics;             // per phrase
  std::vector<std::vector<std::size_t>> words;  // base word indices per phrase
  std::vector<SyntheticLanguage> languages;

  std::size_t num_pairs() const { return topics.size(); }
  std::size_t language_index(const std::string& tag) const;
  // Record i pairs phrase i of language `source` with phrase i of `target`.
  std::vector<corpus::PhrasePairRecord> pair_records(std::size_t source, std::size_t target) const;
};

BaseVocabulary partition_vocabulary(std::size_t vocab_size, double phrase_word_share = 0.15);
std::string language_tag(std::size_t index);  // "A", "B", ...
std::string word_surface(std::size_t language, std::size_t base_index, const BaseVocabulary& base);

SyntheticCorpus generate_synthetic_languages(const SyntheticOptions& options);

struct Split {
  std::vector<corpus::PhrasePairRecord> train;
  std::vector<corpus::PhrasePairRecord> test;
};
// The last `test_size` records form the test split.
Split split_train_test(const std::vector<corpus::PhrasePairRecord>& records, std::size_t test_size);

}  // namespace xphrase::synth
