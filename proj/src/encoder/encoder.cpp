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

#include "xphrase/encoder.hpp"

#include "xphrase/keyvalue.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace xphrase::encoder {

namespace {

constexpr std::size_t kHeadOffset = 2;  // after the two embedding tables

}  // namespace

void EncoderConfig::validate() const {
  auto positive = [](const char* name, std::size_t v) {
    if (v == 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive("vocab_size", vocab_size);
  positive("hidden_dim", hidden_dim);
  positive("num_heads", num_heads);
  positive("ffn_dim", ffn_dim);
  positive("max_sequence_length", max_sequence_length);
  positive("projection_dim", projection_dim);
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("config: hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (representation_layer > num_layers) {
    throw ConfigError("config: representation_layer " + std::to_string(representation_layer) + " exceeds num_layers " +
                      std::to_string(num_layers));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("config: dropout_rate must lie in [0, 1)");
}

std::string EncoderConfig::to_text() const {
  std::ostringstream out;
  out << "vocab_size = " << vocab_size << "\n"
      << "hidden_dim = " << hidden_dim << "\n"
      << "num_layers = " << num_layers << "\n"
      << "num_heads = " << num_heads << "\n"
      << "ffn_dim = " << ffn_dim << "\n"
      << "max_sequence_length = " << max_sequence_length << "\n"
      << "projection_dim = " << projection_dim << "\n"
      << "representation_layer = " << representation_layer << "\n"
      << "dropout_rate = " << kv::format_double(dropout_rate) << "\n";
  return out.str();
}

void EncoderConfig::set(const std::string& key, const std::string& value) {
  const std::map<std::string, std::size_t EncoderConfig::*> sizes = {
      {"vocab_size", &EncoderConfig::vocab_size},
      {"hidden_dim", &EncoderConfig::hidden_dim},
      {"num_layers", &EncoderConfig::num_layers},
      {"num_heads", &EncoderConfig::num_heads},
      {"ffn_dim", &EncoderConfig::ffn_dim},
      {"max_sequence_length", &EncoderConfig::max_sequence_length},
      {"projection_dim", &EncoderConfig::projection_dim},
      {"representation_layer", &EncoderConfig::representation_layer}};
  if (auto it = sizes.find(key); it != sizes.end()) {
    this->*(it->second) = kv::to_size(key, value);
  } else if (key == "dropout_rate") {
    dropout_rate = kv::to_double(key, value);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

EncoderConfig EncoderConfig::parse(const std::string& text) {
  EncoderConfig c;
  for (const auto& [key, value] : kv::parse_lines(text)) c.set(key, value);
  c.validate();
  return c;
}

std::uint64_t EncoderConfig::hash() const { return fnv1a64(to_text()); }

std::size_t untrained_representation_layer(const EncoderConfig& config) {
  return config.num_layers == 0 ? 0 : config.num_layers - 1;
}

std::size_t middle_layer(const EncoderConfig& config) { return config.num_layers / 2; }

std::size_t expected_parameter_count(const EncoderConfig& c) {
  const std::size_t h = c.hidden_dim, f = c.ffn_dim;
  const std::size_t per_block = 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h;
  return c.vocab_size * h + c.max_sequence_length * h + c.num_layers * per_block + (h * h + h) +
         (h * c.projection_dim + c.projection_dim);
}

PhraseEncoder::PhraseEncoder(EncoderConfig config, ParameterList params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const std::size_t want = kHeadOffset + config_.num_layers * kBlockTensorCount + 4;
  if (params_.size() != want) {
    throw ConfigError("encoder: expected " + std::to_string(want) + " parameter tensors, got " +
                      std::to_string(params_.size()));
  }
}

const Tensor& PhraseEncoder::block(std::size_t layer, std::size_t i) const {
  return params_[kHeadOffset + layer * kBlockTensorCount + i].tensor;
}

const Tensor& PhraseEncoder::head(std::size_t i) const {
  return params_[kHeadOffset + config_.num_layers * kBlockTensorCount + i].tensor;
}

PhraseEncoder PhraseEncoder::clone(bool trainable) const {
  return PhraseEncoder(config_, clone_parameters(params_, trainable));
}

PhraseEncoder init_parameters(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t h = config.hidden_dim, f = config.ffn_dim;
  ParameterList params;
  auto uniform = [&](std::string name, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-0.05, 0.05);
    params.push_back({std::move(name), Tensor::from(std::move(shape), std::move(v), true)});
  };
  auto constant = [&](std::string name, Shape shape, double value) {
    params.push_back({std::move(name), Tensor::filled(std::move(shape), value, true)});
  };
  uniform("embed.token", {config.vocab_size, h});
  uniform("embed.position", {config.max_sequence_length, h});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* w : {"q", "k", "v", "o"}) {
      uniform(p + "w" + w, {h, h});
      constant(p + "b" + w, {h}, 0.0);
    }
    constant(p + "ln1_gain", {h}, 1.0);
    constant(p + "ln1_bias", {h}, 0.0);
    uniform(p + "ffn_w1", {h, f});
    constant(p + "ffn_b1", {f}, 0.0);
    uniform(p + "ffn_w2", {f, h});
    constant(p + "ffn_b2", {h}, 0.0);
    constant(p + "ln2_gain", {h}, 1.0);
    constant(p + "ln2_bias", {h}, 0.0);
  }
  uniform("head.w1", {h, h});
  constant("head.b1", {h}, 0.0);
  uniform("head.w2", {h, config.projection_dim});
  constant("head.b2", {config.projection_dim}, 0.0);
  return PhraseEncoder(config, std::move(params));
}

EncodedBatch encode_batch(const PhraseEncoder& enc, const std::vector<std::span<const TokenId>>& sentences,
                          std::size_t up_to_layer, Mode mode, Rng* rng) {
  const EncoderConfig& c = enc.config();
  if (up_to_layer > c.num_layers) throw ConfigError("encode: layer " + std::to_string(up_to_layer) + " out of range");
  if (sentences.empty()) throw ShapeError("encode", "no sentences");
  const bool train = mode == Mode::kTrain && c.dropout_rate > 0.0;
  if (train && rng == nullptr) throw std::invalid_argument("encode: training mode needs an rng for dropout");
  const double rate = train ? c.dropout_rate : 0.0;
  Rng* drop_rng = train ? rng : nullptr;

  EncodedBatch out;
  std::vector<std::size_t> ids, positions;
  for (const auto& s : sentences) {
    if (s.empty()) throw ShapeError("encode", "empty sentence");
    if (s.size() > c.max_sequence_length) {
      throw ShapeError("encode", "sentence of " + std::to_string(s.size()) + " tokens exceeds max_sequence_length " +
                                     std::to_string(c.max_sequence_length));
    }
    out.segments.push_back({ids.size(), s.size()});
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= c.vocab_size) throw ShapeError("encode", "token id " + std::to_string(s[i]) + " outside vocabulary");
      ids.push_back(s[i]);
      positions.push_back(i);
    }
  }

  Tensor x = add(gather_rows(enc.token_embedding(), ids), gather_rows(enc.position_embedding(), positions));
  x = dropout(x, rate, drop_rng);
  out.layers.push_back(x);
  for (std::size_t l = 0; l < up_to_layer; ++l) {
    auto w = [&](std::size_t i) -> const Tensor& { return enc.block(l, i); };
    const Tensor q = add_bias(matmul(x, w(0)), w(1));
    const Tensor k = add_bias(matmul(x, w(2)), w(3));
    const Tensor v = add_bias(matmul(x, w(4)), w(5));
    Tensor attn = add_bias(matmul(segmented_attention(q, k, v, out.segments, c.num_heads), w(6)), w(7));
    attn = dropout(attn, rate, drop_rng);
    x = layer_norm_rows(add(x, attn), w(8), w(9));
    Tensor ffn = add_bias(matmul(gelu(add_bias(matmul(x, w(10)), w(11))), w(12)), w(13));
    ffn = dropout(ffn, rate, drop_rng);
    x = layer_norm_rows(add(x, ffn), w(14), w(15));
    out.layers.push_back(x);
  }
  return out;
}

std::vector<Tensor> encode_tokens(const PhraseEncoder& enc, std::span<const TokenId> sentence, Mode mode, Rng* rng) {
  return encode_batch(enc, {sentence}, enc.config().num_layers, mode, rng).layers;
}

Tensor pool_phrase(const Tensor& hidden, std::size_t s, std::size_t e) {
  if (s < 1 || e < s || e > hidden.rows()) {
    throw ShapeError("pool_phrase", "span [" + std::to_string(s) + ", " + std::to_string(e) + "] outside 1.." +
                                        std::to_string(hidden.rows()));
  }
  std::vector<WeightedRow> pool;
  const double w = 1.0 / static_cast<double>(e - s + 1);
  for (std::size_t i = s; i <= e; ++i) pool.push_back({i - 1, w});
  return pool_rows(hidden, {pool});
}

Tensor project(const PhraseEncoder& enc, const Tensor& u) {
  const Tensor hidden = relu(add_bias(matmul(u, enc.head(0)), enc.head(1)));
  return l2_normalize_rows(add_bias(matmul(hidden, enc.head(2)), enc.head(3)));
}

RepresentationBatch represent_batch(const PhraseEncoder& enc, const std::vector<ExampleSet>& phrases,
                                    const RepresentOptions& options) {
  const std::size_t layer = options.layer.value_or(enc.config().representation_layer);
  if (phrases.empty()) throw ShapeError("represent", "no phrases");
  std::vector<std::span<const TokenId>> sentences;
  std::vector<std::vector<WeightedRow>> pools(phrases.size());
  std::size_t row = 0;
  std::vector<std::size_t> first_row;
  for (std::size_t b = 0; b < phrases.size(); ++b) {
    const ExampleSet& set = phrases[b];
    if (set.empty()) throw ShapeError("represent", "phrase " + std::to_string(b) + " has no example sentences");
    const std::size_t base = sentences.size();
    first_row.resize(base + set.size());
    for (std::size_t k = 0; k < set.size(); ++k) {
      const ExampleSentence& ex = *set[k];
      if (ex.span_start < 1 || ex.span_end < ex.span_start || ex.span_end > ex.tokens.size()) {
        throw ShapeError("represent", "example span [" + std::to_string(ex.span_start) + ", " +
                                          std::to_string(ex.span_end) + "] outside sentence of " +
                                          std::to_string(ex.tokens.size()) + " tokens");
      }
      sentences.emplace_back(ex.tokens);
      first_row[base + k] = row;
      row += ex.tokens.size();
    }
    // Accumulate in a canonical order so the mean does not depend on list order.
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      const ExampleSentence& x = *set[a];
      const ExampleSentence& y = *set[c];
      if (x.tokens != y.tokens) return x.tokens < y.tokens;
      return std::pair(x.span_start, x.span_end) < std::pair(y.span_start, y.span_end);
    });
    const double m = static_cast<double>(set.size());
    for (std::size_t k : order) {
      const ExampleSentence& ex = *set[k];
      const double w = 1.0 / (m * static_cast<double>(ex.span_end - ex.span_start + 1));
      for (std::size_t i = ex.span_start; i <= ex.span_end; ++i) pools[b].push_back({first_row[base + k] + i - 1, w});
    }
  }
  const EncodedBatch encoded = encode_batch(enc, sentences, layer, options.mode, options.rng);
  RepresentationBatch out;
  out.u = pool_rows(encoded.layers[layer], pools);
  out.p = options.use_projection ? project(enc, out.u) : l2_normalize_rows(out.u);
  return out;
}

PhraseRepresentation represent_phrase(const PhraseEncoder& enc, std::span<const ExampleSentence> examples,
                                      const RepresentOptions& options) {
  if (examples.empty()) throw ShapeError("represent_phrase", "at least one example sentence is required");
  ExampleSet set;
  for (const auto& ex : examples) set.push_back(&ex);
  RepresentationBatch batch = represent_batch(enc, {set}, options);
  return {batch.u, batch.p};
}

ExampleSentence bare_phrase_example(const corpus::Phrase& phrase) {
  if (phrase.tokens.empty()) throw ShapeError("bare_phrase_example", "phrase '" + phrase.id + "' has no tokens");
  return {phrase.surface, phrase.tokens, 1, phrase.tokens.size()};
}

std::string config_sidecar_path(const std::string& checkpoint_path) { return checkpoint_path + ".cfg"; }

void save_encoder(const PhraseEncoder& enc, const std::string& path) {
  Checkpoint ckpt;
  ckpt.config_hash = enc.config().hash();
  append_parameters(ckpt, "", enc.parameters());
  save_checkpoint(ckpt, path);
  std::ofstream cfg(config_sidecar_path(path), std::ios::binary);
  cfg << enc.config().to_text();
  if (!cfg) throw std::runtime_error("cannot write " + config_sidecar_path(path));
}

PhraseEncoder load_encoder(const std::string& path) {
  std::ifstream in(config_sidecar_path(path), std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + config_sidecar_path(path));
  std::stringstream buf;
  buf << in.rdbuf();
  const EncoderConfig config = EncoderConfig::parse(buf.str());
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_hash != config.hash()) {
    throw ConfigError("encoder: checkpoint " + path + " was written for a different config");
  }
  PhraseEncoder enc = init_parameters(config, 0);
  restore_parameters(ckpt, "", enc.parameters());
  return enc;
}

}  // namespace xphrase::encoder
