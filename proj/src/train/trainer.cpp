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

#include "xphrase/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "xphrase/keyvalue.hpp"
#include "xphrase/log.hpp"

namespace xphrase::trainer {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEpochStream = 2;
constexpr std::uint64_t kStepStream = 3;

const char* bool_text(bool b) { return b ? "true" : "false"; }

CheckpointEntry matrix_entry(const std::string& name, const contrast::NegativeQueue& queue) {
  CheckpointEntry e{name, {queue.size(), queue.empty() ? 1 : queue.entries().front().size()}, {}};
  for (const auto& row : queue.entries()) e.values.insert(e.values.end(), row.begin(), row.end());
  return e;
}

void restore_queue(const Checkpoint& ckpt, const std::string& name, contrast::NegativeQueue& queue) {
  const CheckpointEntry* e = ckpt.find(name);
  if (e == nullptr || e->shape.size() != 2 || e->shape[0] == 0) return;
  queue.push(Tensor::from(e->shape, e->values));
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
  if (sentences_per_phrase < 1) throw std::invalid_argument("train: sentences_per_phrase must be at least 1");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw std::invalid_argument("train: warmup_fraction must lie in [0, 1]");
  contrast.validate(batch_size);
  encoder.validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "batch_size = " << batch_size << "\n"
      << "sentences_per_phrase = " << sentences_per_phrase << "\n"
      << "epochs = " << epochs << "\n"
      << "seed = " << seed << "\n"
      << "learning_rate = " << kv::format_double(learning_rate) << "\n"
      << "warmup_fraction = " << kv::format_double(warmup_fraction) << "\n"
      << "checkpoint_every = " << checkpoint_every << "\n"
      << "use_example_sentences = " << bool_text(use_example_sentences) << "\n"
      << "temperature = " << kv::format_double(contrast.temperature) << "\n"
      << "momentum = " << kv::format_double(contrast.momentum) << "\n"
      << "use_momentum_encoder = " << bool_text(contrast.use_momentum_encoder) << "\n"
      << "use_projection_head = " << bool_text(contrast.use_projection_head) << "\n"
      << "moco_queue_length = " << contrast.moco_queue_length << "\n";
  std::istringstream enc(encoder.to_text());
  std::string line;
  while (std::getline(enc, line)) out << "encoder." << line << "\n";
  return out.str();
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key.rfind("encoder.", 0) == 0) {
    encoder.set(key.substr(8), value);
  } else if (key == "batch_size") {
    batch_size = kv::to_size(key, value);
  } else if (key == "sentences_per_phrase") {
    sentences_per_phrase = kv::to_size(key, value);
  } else if (key == "epochs") {
    epochs = kv::to_size(key, value);
  } else if (key == "seed") {
    seed = kv::to_size(key, value);
  } else if (key == "learning_rate") {
    learning_rate = kv::to_double(key, value);
  } else if (key == "warmup_fraction") {
    warmup_fraction = kv::to_double(key, value);
  } else if (key == "checkpoint_every") {
    checkpoint_every = kv::to_size(key, value);
  } else if (key == "use_example_sentences") {
    use_example_sentences = kv::to_bool(key, value);
  } else if (key == "temperature") {
    contrast.temperature = kv::to_double(key, value);
  } else if (key == "momentum") {
    contrast.momentum = kv::to_double(key, value);
  } else if (key == "use_momentum_encoder") {
    contrast.use_momentum_encoder = kv::to_bool(key, value);
  } else if (key == "use_projection_head") {
    contrast.use_projection_head = kv::to_bool(key, value);
  } else if (key == "moco_queue_length") {
    contrast.moco_queue_length = kv::to_size(key, value);
  } else {
    throw kv::ParseError("config: unknown key '" + key + "'");
  }
}

void TrainConfig::apply_text(const std::string& text) {
  for (const auto& [key, value] : kv::parse_lines(text)) set(key, value);
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(to_text()); }

std::size_t batches_per_epoch(std::size_t corpus_size, std::size_t batch_size) {
  return batch_size == 0 ? 0 : corpus_size / batch_size;
}

std::uint64_t total_steps(const TrainConfig& config, std::size_t corpus_size) {
  return static_cast<std::uint64_t>(config.epochs) * batches_per_epoch(corpus_size, config.batch_size);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t corpus_size, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0 || corpus_size < batch_size) {
    throw TrainError("train: corpus of " + std::to_string(corpus_size) + " records is smaller than batch size " +
                     std::to_string(batch_size));
  }
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b + batch_size <= corpus_size; b += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(b + batch_size));
  }
  return out;
}

std::vector<const ExampleSentence*> sample_examples(const std::vector<ExampleSentence>& examples, Rng& rng,
                                                    std::size_t m) {
  if (examples.empty()) throw TrainError("train: record has no example sentences");
  std::vector<const ExampleSentence*> out;
  if (examples.size() >= m) {
    std::vector<std::size_t> idx(examples.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
      std::swap(idx[i], idx[i + rng.uniform_index(idx.size() - i)]);
      out.push_back(&examples[idx[i]]);
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) out.push_back(&examples[rng.uniform_index(examples.size())]);
  }
  return out;
}

encoder::PhraseEncoder initial_encoder(const TrainConfig& config) {
  return encoder::init_parameters(config.encoder, derive_seed(config.seed, kInitStream));
}

TrainState init_state(const TrainConfig& config, std::size_t corpus_size) {
  config.validate();
  TrainState state;
  state.online = initial_encoder(config);
  state.momentum = state.online.clone(false);
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.warmup_fraction = config.warmup_fraction;
  adam.total_steps = std::max<std::uint64_t>(1, total_steps(config, corpus_size));
  state.adam = make_adam_state(state.online.parameters(), adam);
  const std::size_t capacity = std::max<std::size_t>(1, config.contrast.moco_queue_length);
  state.queue_q = contrast::NegativeQueue(capacity);
  state.queue_p = contrast::NegativeQueue(capacity);
  return state;
}

Checkpoint state_checkpoint(const TrainState& state, const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.config_hash = config.hash();
  append_parameters(ckpt, "online.", state.online.parameters());
  append_parameters(ckpt, "momentum.", state.momentum.parameters());
  const auto& params = state.online.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.entries.push_back({"adam.m." + params[i].name, params[i].tensor.shape(), state.adam.first_moment[i]});
    ckpt.entries.push_back({"adam.v." + params[i].name, params[i].tensor.shape(), state.adam.second_moment[i]});
  }
  ckpt.entries.push_back({"state.step", {1}, {static_cast<double>(state.step)}});
  if (config.contrast.moco_queue_length > 0) {
    ckpt.entries.push_back(matrix_entry("queue.q", state.queue_q));
    ckpt.entries.push_back(matrix_entry("queue.p", state.queue_p));
  }
  return ckpt;
}

TrainState restore_state(const Checkpoint& ckpt, const TrainConfig& config, std::size_t corpus_size) {
  if (ckpt.config_hash != config.hash()) throw TrainError("train: checkpoint was written with a different config");
  TrainState state = init_state(config, corpus_size);
  restore_parameters(ckpt, "online.", state.online.parameters());
  restore_parameters(ckpt, "momentum.", state.momentum.parameters());
  const auto& params = state.online.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const CheckpointEntry* m = ckpt.find("adam.m." + params[i].name);
    const CheckpointEntry* v = ckpt.find("adam.v." + params[i].name);
    if (m == nullptr || v == nullptr) throw TrainError("train: checkpoint lacks optimizer state for " + params[i].name);
    state.adam.first_moment[i] = m->values;
    state.adam.second_moment[i] = v->values;
  }
  const CheckpointEntry* step = ckpt.find("state.step");
  if (step == nullptr || step->values.size() != 1) throw TrainError("train: checkpoint lacks the step counter");
  state.step = static_cast<std::uint64_t>(step->values[0]);
  state.adam.step_count = state.step;
  state.epoch = state.step / std::max<std::size_t>(1, batches_per_epoch(corpus_size, config.batch_size));
  restore_queue(ckpt, "queue.q", state.queue_q);
  restore_queue(ckpt, "queue.p", state.queue_p);
  return state;
}

double train_step(TrainState& state, const TrainConfig& config, const std::vector<const PhrasePairRecord*>& batch,
                  Rng& rng) {
  const auto& cc = config.contrast;
  auto batch_ids = [&] {
    std::string ids;
    for (const PhrasePairRecord* rec : batch) ids += (ids.empty() ? "" : ",") + rec->id;
    return ids;
  };
  std::vector<encoder::ExampleSet> xs, ys;
  std::vector<ExampleSentence> bare;
  bare.reserve(2 * batch.size());
  for (const PhrasePairRecord* rec : batch) {
    if (config.use_example_sentences) {
      xs.push_back(sample_examples(rec->source_examples, rng, config.sentences_per_phrase));
      ys.push_back(sample_examples(rec->target_examples, rng, config.sentences_per_phrase));
    } else {
      bare.push_back(encoder::bare_phrase_example(rec->source));
      xs.push_back({&bare.back()});
      bare.push_back(encoder::bare_phrase_example(rec->target));
      ys.push_back({&bare.back()});
    }
  }
  const bool queued = cc.moco_queue_length > 0;
  Tensor loss, p_star, q_star;
  try {
    encoder::RepresentOptions online_opts;
    online_opts.mode = encoder::Mode::kTrain;
    online_opts.rng = &rng;
    online_opts.use_projection = cc.use_projection_head;
    const Tensor p = encoder::represent_batch(state.online, xs, online_opts).p;
    const Tensor q = encoder::represent_batch(state.online, ys, online_opts).p;
    p_star = p;
    q_star = q;
    if (cc.use_momentum_encoder) {
      NoGradGuard no_grad;
      encoder::RepresentOptions m_opts;
      m_opts.use_projection = cc.use_projection_head;
      p_star = encoder::represent_batch(state.momentum, xs, m_opts).p;
      q_star = encoder::represent_batch(state.momentum, ys, m_opts).p;
    }
    loss = add(contrast::directional_loss(p, queued ? state.queue_q.negatives(q_star) : q_star, cc.temperature),
               contrast::directional_loss(q, queued ? state.queue_p.negatives(p_star) : p_star, cc.temperature));
  } catch (const std::exception& e) {
    throw TrainError("train: step " + std::to_string(state.step + 1) + " failed (" + e.what() + ") on records " +
                     batch_ids());
  }
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw TrainError("train: non-finite loss " + std::to_string(value) + " at step " + std::to_string(state.step + 1) +
                     " on records " + batch_ids());
  }
  zero_grad(state.online.parameters());
  loss.backward();
  adam_step(state.online.parameters(), state.adam);
  if (cc.use_momentum_encoder) contrast::update_momentum(state.momentum, state.online, cc.momentum);
  if (queued) {
    state.queue_q.push(q_star.detach());
    state.queue_p.push(p_star.detach());
  }
  ++state.step;
  return value;
}

std::string checkpoint_name(std::uint64_t step) {
  std::string digits = std::to_string(step);
  return "step-" + std::string(digits.size() < 7 ? 7 - digits.size() : 0, '0') + digits + ".ckpt";
}

TrainResult train(const std::vector<PhrasePairRecord>& corpus, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const std::size_t per_epoch = batches_per_epoch(corpus.size(), config.batch_size);
  if (per_epoch == 0) {
    throw TrainError("train: corpus of " + std::to_string(corpus.size()) + " records is smaller than batch size " +
                     std::to_string(config.batch_size));
  }
  for (const auto& rec : corpus) {
    if (config.use_example_sentences && (rec.source_examples.empty() || rec.target_examples.empty())) {
      throw TrainError("train: record " + rec.id + " has no example sentences");
    }
  }
  const std::uint64_t total = total_steps(config, corpus.size());

  TrainResult result;
  result.state = options.resume_from.empty() ? init_state(config, corpus.size())
                                             : restore_state(load_checkpoint(options.resume_from), config, corpus.size());
  TrainState& state = result.state;
  log_info("train: " + std::to_string(corpus.size()) + " records, " + std::to_string(total) + " steps, starting at step " +
           std::to_string(state.step));
  log_debug("train config:\n" + config.to_text());

  std::ofstream trace;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    trace.open(std::filesystem::path(options.out_dir) / "loss.tsv", state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!trace) throw TrainError("train: cannot write loss trace in " + options.out_dir);
    std::ofstream(std::filesystem::path(options.out_dir) / "train.cfg") << config.to_text();
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::vector<std::size_t>> batches;
  std::uint64_t batches_epoch = ~0ULL;
  while (state.step < total) {
    const std::uint64_t epoch = state.step / per_epoch;
    if (epoch != batches_epoch) {
      Rng epoch_rng(derive_seed(config.seed, kEpochStream, epoch));
      batches = epoch_batches(corpus.size(), config.batch_size, epoch_rng);
      batches_epoch = epoch;
    }
    state.epoch = epoch;
    std::vector<const PhrasePairRecord*> batch;
    for (std::size_t i : batches[state.step % per_epoch]) batch.push_back(&corpus[i]);
    Rng step_rng(derive_seed(config.seed, kStepStream, state.step));
    const double loss = train_step(state, config, batch, step_rng);

    StepRecord rec;
    rec.step = state.step;
    rec.loss = loss;
    rec.learning_rate = scheduled_learning_rate(state.adam.config, state.step);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trace.push_back(rec);
    if (trace) trace << rec.step << '\t' << kv::format_double(rec.loss) << '\t' << kv::format_double(rec.learning_rate)
                     << '\t' << rec.seconds << '\n';
    if (options.on_step) options.on_step(rec);
    if (!options.out_dir.empty() && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      save_checkpoint(state_checkpoint(state, config), (std::filesystem::path(options.out_dir) / checkpoint_name(state.step)).string());
    }
    if (options.stop_after_step && state.step >= *options.stop_after_step) break;
  }
  state.epoch = state.step / per_epoch;
  if (!options.out_dir.empty()) {
    const auto dir = std::filesystem::path(options.out_dir);
    save_checkpoint(state_checkpoint(state, config), (dir / "final.ckpt").string());
    encoder::save_encoder(state.online, (dir / "encoder.ckpt").string());
  }
  return result;
}

}  // namespace xphrase::trainer
