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

#include "xphrase/corpus.hpp"
#include "xphrase/keyvalue.hpp"
#include "xphrase/rng.hpp"
#include "xphrase/tensor.hpp"

namespace xphrase::encoder {

using corpus::ExampleSentence;
using corpus::TokenId;

class ConfigError : public kv::ParseError {
 public:
  using kv::ParseError::ParseError;
};

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_sequence_length = 64;
  std::size_t projection_dim = 64;
  // 0 selects the embedding sum; num_layers selects the last block.
  std::size_t representation_layer = 2;
  double dropout_rate = 0.1;

  void validate() const;
  // Flat "key = value" lines; round-trips through parse().
  std::string to_text() const;
  static EncoderConfig parse(const std::string& text);
  // Assigns one key without validating the result.
  void set(const std::string& key, const std::string& value);
  std::uint64_t hash() const;

  bool operator==(const EncoderConfig&) const = default;
};

// Layer used for retrieval with an encoder that has not been trained.
std::size_t untrained_representation_layer(const EncoderConfig& config);
std::size_t middle_layer(const EncoderConfig& config);
std::size_t expected_parameter_count(const EncoderConfig& config);

enum class Mode { kTrain, kEval };

class PhraseEncoder {
 public:
  PhraseEncoder() = default;
  PhraseEncoder(EncoderConfig config, ParameterList params);

  const EncoderConfig& config() const { return config_; }
  EncoderConfig& mutable_config() { return config_; }
  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }

  const Tensor& token_embedding() const { return params_[0].tensor; }
  const Tensor& position_embedding() const { return params_[1].tensor; }
  // i-th tensor of block `layer`, in the order listed by kBlockTensorNames.
  const Tensor& block(std::size_t layer, std::size_t i) const;
  const Tensor& head(std::size_t i) const;  // w1, b1, w2, b2

  // Deep copy; requires_grad on every parameter set to `trainable`.
  PhraseEncoder clone(bool trainable) const;

 private:
  EncoderConfig config_;
  ParameterList params_;
};

inline constexpr const char* kBlockTensorNames[] = {
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_bias",
    "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln2_gain", "ln2_bias"};
inline constexpr std::size_t kBlockTensorCount = 16;

PhraseEncoder init_parameters(const EncoderConfig& config, std::uint64_t seed);

// Hidden states of every layer 0..num_layers, each [n, hidden_dim] for one sentence.
std::vector<Tensor> encode_tokens(const PhraseEncoder& enc, std::span<const TokenId> sentence,
                                  Mode mode = Mode::kEval, Rng* rng = nullptr);

// Several sentences packed row-wise; attention never crosses sentence boundaries.
struct EncodedBatch {
  std::vector<Segment> segments;
  std::vector<Tensor> layers;  // layers[0..up_to_layer], each [total_tokens, hidden_dim]
};
EncodedBatch encode_batch(const PhraseEncoder& enc, const std::vector<std::span<const TokenId>>& sentences,
                          std::size_t up_to_layer, Mode mode = Mode::kEval, Rng* rng = nullptr);

// Mean of rows s..e (1-based, inclusive) of one sentence's hidden states, as [1, hidden_dim].
Tensor pool_phrase(const Tensor& hidden, std::size_t s, std::size_t e);

// Two linear layers with a ReLU between, then row-wise L2 normalization.
Tensor project(const PhraseEncoder& enc, const Tensor& u);

struct PhraseRepresentation {
  Tensor u;  // [1, hidden_dim]
  Tensor p;  // [1, projection_dim], unit norm
};

struct RepresentationBatch {
  Tensor u;  // [B, hidden_dim]
  Tensor p;  // [B, d] unit rows; d = projection_dim, or hidden_dim when unprojected
};

struct RepresentOptions {
  Mode mode = Mode::kEval;
  Rng* rng = nullptr;
  // When false, p is the normalized pre-projection vector.
  bool use_projection = true;
  // Overrides config().representation_layer when set.
  std::optional<std::size_t> layer;
};

// One entry per phrase, each a non-empty list of example sentences.
using ExampleSet = std::vector<const ExampleSentence*>;

RepresentationBatch represent_batch(const PhraseEncoder& enc, const std::vector<ExampleSet>& phrases,
                                    const RepresentOptions& options = {});
PhraseRepresentation represent_phrase(const PhraseEncoder& enc, std::span<const ExampleSentence> examples,
                                      const RepresentOptions& options = {});

// The phrase on its own as a single sentence, span covering every token.
ExampleSentence bare_phrase_example(const corpus::Phrase& phrase);

// Checkpoint at `path`, config text at `path + ".cfg"`.
void save_encoder(const PhraseEncoder& enc, const std::string& path);
PhraseEncoder load_encoder(const std::string& path);
std::string config_sidecar_path(const std::string& checkpoint_path);

}  // namespace xphrase::encoder
