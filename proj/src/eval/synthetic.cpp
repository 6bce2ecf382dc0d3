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

#include "xphrase/synthetic.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "xphrase/rng.hpp"

namespace xphrase::synth {

namespace {

constexpr std::uint64_t kPhraseStream = 1;
constexpr std::uint64_t kCipherStream = 100;
constexpr std::uint64_t kSentenceStream = 1000;

constexpr std::size_t kMinContext = 4;
constexpr std::size_t kMaxContext = 7;

std::size_t phrase_length(Rng& rng) {
  const double u = rng.uniform();
  return u < 0.2 ? 1 : u < 0.7 ? 2 : 3;
}

}  // namespace

BaseVocabulary partition_vocabulary(std::size_t vocab_size, double phrase_word_share) {
  if (vocab_size < 40) throw std::invalid_argument("synth: vocab_size must be at least 40");
  if (!(phrase_word_share > 0.0 && phrase_word_share <= 0.7)) {
    throw std::invalid_argument("synth: phrase_word_share must lie in (0, 0.7]");
  }
  BaseVocabulary b;
  b.anchors_per_topic = 2;
  b.num_topics = vocab_size / 10 / b.anchors_per_topic;
  const std::size_t phrase_words = std::max<std::size_t>(1, static_cast<std::size_t>(phrase_word_share * static_cast<double>(vocab_size)));
  const std::size_t general = vocab_size / 10;
  b.words_per_topic = (vocab_size - b.num_topics * b.anchors_per_topic - general - phrase_words) / b.num_topics;
  std::size_t next = 0;
  for (std::size_t i = 0; i < b.num_topics * b.anchors_per_topic; ++i) b.anchors.push_back(next++);
  for (std::size_t i = 0; i < b.num_topics * b.words_per_topic; ++i) b.topic_words.push_back(next++);
  for (std::size_t i = 0; i < general; ++i) b.general_words.push_back(next++);
  while (next < vocab_size) b.phrase_words.push_back(next++);
  return b;
}

std::string language_tag(std::size_t index) {
  if (index >= 26) throw std::invalid_argument("synth: at most 26 languages");
  return std::string(1, static_cast<char>('A' + index));
}

std::string word_surface(std::size_t language, std::size_t base_index, const BaseVocabulary& base) {
  if (base_index < base.anchors.size()) return "x" + std::to_string(base_index);
  return std::string(1, static_cast<char>('a' + language)) + std::to_string(base_index);
}

std::size_t SyntheticCorpus::language_index(const std::string& tag) const {
  for (std::size_t i = 0; i < languages.size(); ++i)
    if (languages[i].tag == tag) return i;
  throw std::invalid_argument("synth: unknown language '" + tag + "'");
}

std::vector<corpus::PhrasePairRecord> SyntheticCorpus::pair_records(std::size_t source, std::size_t target) const {
  if (source >= languages.size() || target >= languages.size()) throw std::invalid_argument("synth: language out of range");
  std::vector<corpus::PhrasePairRecord> out;
  out.reserve(num_pairs());
  for (std::size_t i = 0; i < num_pairs(); ++i) {
    corpus::PhrasePairRecord r;
    r.id = "p" + std::to_string(i);
    r.source = languages[source].phrases[i];
    r.source.id = corpus::source_phrase_id(r.id);
    r.target = languages[target].phrases[i];
    r.target.id = corpus::target_phrase_id(r.id);
    r.source_examples = languages[source].examples[i];
    r.target_examples = languages[target].examples[i];
    out.push_back(std::move(r));
  }
  return out;
}

SyntheticCorpus generate_synthetic_languages(const SyntheticOptions& options) {
  if (options.n_pairs == 0 || options.sentences_per_phrase == 0 || options.num_languages == 0) {
    throw std::invalid_argument("synth: parameters must be positive");
  }
  if (!(options.anchor_rate >= 0.0 && options.topic_rate >= 0.0 && options.anchor_rate + options.topic_rate <= 1.0)) {
    throw std::invalid_argument("synth: context rates must be non-negative and sum to at most 1");
  }
  if (options.sentences_per_phrase > corpus::kMaxExamples) {
    throw std::invalid_argument("synth: at most " + std::to_string(corpus::kMaxExamples) + " sentences per phrase");
  }
  SyntheticCorpus out;
  out.options = options;
  out.base = partition_vocabulary(options.vocab_size, options.phrase_word_share);
  const BaseVocabulary& base = out.base;

  const std::size_t group = options.ambiguous ? options.ambiguity_group : 1;
  if (group == 0 || (options.ambiguous && group < 2) || group > base.num_topics) {
    throw std::invalid_argument("synth: ambiguity_group must be in [2, " + std::to_string(base.num_topics) + "]");
  }
  const std::size_t distinct = (options.n_pairs + group - 1) / group;
  const double pw = static_cast<double>(base.phrase_words.size());
  if (pw + pw * pw + pw * pw * pw < 4.0 * static_cast<double>(distinct)) {
    throw std::invalid_argument("synth: vocab_size " + std::to_string(options.vocab_size) + " is too small for " +
                                std::to_string(options.n_pairs) + " pairs");
  }

  Rng rng(derive_seed(options.seed, kPhraseStream));
  std::set<std::vector<std::size_t>> seen;
  while (out.words.size() < options.n_pairs) {
    std::vector<std::size_t> words(phrase_length(rng));
    for (auto& w : words) w = base.phrase_words[rng.uniform_index(base.phrase_words.size())];
    if (!seen.insert(words).second) continue;
    std::vector<std::size_t> topics(base.num_topics);
    for (std::size_t t = 0; t < topics.size(); ++t) topics[t] = t;
    for (std::size_t g = 0; g < group && out.words.size() < options.n_pairs; ++g) {
      std::swap(topics[g], topics[g + rng.uniform_index(topics.size() - g)]);
      out.words.push_back(words);
      out.topics.push_back(topics[g]);
    }
  }

  for (std::size_t k = 0; k < options.num_languages; ++k) {
    SyntheticLanguage lang;
    lang.tag = language_tag(k);
    lang.permutation.resize(options.vocab_size);
    for (std::size_t w = 0; w < options.vocab_size; ++w) lang.permutation[w] = w;
    if (k > 0) {
      std::vector<std::size_t> movable(lang.permutation.begin() + static_cast<std::ptrdiff_t>(base.anchors.size()),
                                       lang.permutation.end());
      Rng cipher(derive_seed(options.seed, kCipherStream, k));
      cipher.shuffle(movable);
      std::copy(movable.begin(), movable.end(), lang.permutation.begin() + static_cast<std::ptrdiff_t>(base.anchors.size()));
    }
    for (std::size_t w = 0; w < options.vocab_size; ++w) {
      if (k == 0 || w >= base.anchors.size()) out.vocab.add(word_surface(k, w, base));
    }
    out.languages.push_back(std::move(lang));
  }

  for (std::size_t k = 0; k < options.num_languages; ++k) {
    SyntheticLanguage& lang = out.languages[k];
    auto surface = [&](std::size_t w) { return word_surface(k, lang.permutation[w], base); };
    for (std::size_t i = 0; i < out.num_pairs(); ++i) {
      corpus::Phrase phrase;
      phrase.id = lang.tag + ":" + std::to_string(i);
      phrase.language = lang.tag;
      for (std::size_t w : out.words[i]) {
        phrase.surface += (phrase.surface.empty() ? "" : " ") + surface(w);
        phrase.tokens.push_back(out.vocab.id(surface(w)));
      }
      Rng srng(derive_seed(options.seed, kSentenceStream + k, i));
      const std::size_t topic = out.topics[i];
      std::vector<corpus::ExampleSentence> examples;
      for (std::size_t j = 0; j < options.sentences_per_phrase; ++j) {
        const std::size_t context = kMinContext + srng.uniform_index(kMaxContext - kMinContext + 1);
        std::vector<std::size_t> words;
        for (std::size_t c = 0; c < context; ++c) {
          const double u = srng.uniform();
          if (u < options.anchor_rate) {
            words.push_back(base.anchors[topic * base.anchors_per_topic + srng.uniform_index(base.anchors_per_topic)]);
          } else if (u < options.anchor_rate + options.topic_rate) {
            words.push_back(base.topic_words[topic * base.words_per_topic + srng.uniform_index(base.words_per_topic)]);
          } else {
            words.push_back(base.general_words[srng.uniform_index(base.general_words.size())]);
          }
        }
        const std::size_t at = srng.uniform_index(context + 1);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), out.words[i].begin(), out.words[i].end());
        corpus::ExampleSentence ex;
        for (std::size_t w : words) {
          ex.text += (ex.text.empty() ? "" : " ") + surface(w);
          ex.tokens.push_back(out.vocab.id(surface(w)));
        }
        ex.span_start = at + 1;
        ex.span_end = at + out.words[i].size();
        examples.push_back(std::move(ex));
      }
      lang.phrases.push_back(std::move(phrase));
      lang.examples.push_back(std::move(examples));
    }
  }
  return out;
}

Split split_train_test(const std::vector<corpus::PhrasePairRecord>& records, std::size_t test_size) {
  if (test_size >= records.size()) {
    throw std::invalid_argument("synth: test split of " + std::to_string(test_size) + " leaves no training records out of " +
                                std::to_string(records.size()));
  }
  Split s;
  const auto cut = records.begin() + static_cast<std::ptrdiff_t>(records.size() - test_size);
  s.train.assign(records.begin(), cut);
  s.test.assign(cut, records.end());
  return s;
}

}  // namespace xphrase::synth
