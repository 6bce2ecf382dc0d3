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
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xphrase/contrast.hpp"
#include "xphrase/corpus.hpp"
#include "xphrase/encoder.hpp"
#include "xphrase/rng.hpp"
#include "xphrase/tensor.hpp"

namespace xphrase::trainer {

using corpus::ExampleSentence;
using corpus::PhrasePairRecord;

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t sentences_per_phrase = 4;
  std::size_t epochs = 40;
  std::uint64_t seed = 1;
  double learning_rate = 3e-4;
  double warmup_fraction = 0.01;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  // When false, each phrase is encoded from its own tokens alone.
  bool use_example_sentences = true;
  contrast::ContrastConfig contrast;
  encoder::EncoderConfig encoder;

  void validate() const;
  std::string to_text() const;
  // Applies "key = value" lines on top of the current values; encoder keys
  // carry an "encoder." prefix. Unknown keys are rejected.
  void apply_text(const std::string& text);
  void set(const std::string& key, const std::string& value);
  std::uint64_t hash() const;
};

std::size_t batches_per_epoch(std::size_t corpus_size, std::size_t batch_size);
std::uint64_t total_steps(const TrainConfig& config, std::size_t corpus_size);

// One shuffled pass over the corpus cut into full batches; the remainder is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t corpus_size, std::size_t batch_size, Rng& rng);

// m draws without replacement when the list is long enough, with replacement otherwise.
std::vector<const ExampleSentence*> sample_examples(const std::vector<ExampleSentence>& examples, Rng& rng,
                                                    std::size_t m);

// The encoder training starts from for this config and seed.
encoder::PhraseEncoder initial_encoder(const TrainConfig& config);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  double loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  encoder::PhraseEncoder online;
  encoder::PhraseEncoder momentum;
  AdamState adam;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  // Queues of past starred representations (target side, source side).
  contrast::NegativeQueue queue_q{1};
  contrast::NegativeQueue queue_p{1};
};

TrainState init_state(const TrainConfig& config, std::size_t corpus_size);

Checkpoint state_checkpoint(const TrainState& state, const TrainConfig& config);
TrainState restore_state(const Checkpoint& ckpt, const TrainConfig& config, std::size_t corpus_size);

struct TrainOptions {
  std::string out_dir;      // checkpoints and loss trace; empty writes nothing
  std::string resume_from;  // checkpoint written by a run with the same config
  std::optional<std::uint64_t> stop_after_step;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<StepRecord> trace;
};

TrainResult train(const std::vector<PhrasePairRecord>& corpus, const TrainConfig& config,
                  const TrainOptions& options = {});

// Runs exactly one optimization step on the given records and returns its loss.
double train_step(TrainState& state, const TrainConfig& config, const std::vector<const PhrasePairRecord*>& batch,
                  Rng& rng);

std::string checkpoint_name(std::uint64_t step);

}  // namespace xphrase::trainer
