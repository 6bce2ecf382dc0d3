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

#include "xphrase/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "xphrase/log.hpp"
#include "xphrase/retrieval.hpp"

namespace xphrase::eval {

namespace {

using json = nlohmann::ordered_json;
using corpus::ExampleSentence;
using corpus::PhrasePairRecord;
using Examples = std::vector<std::vector<ExampleSentence>>;

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = kv::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string pairs_text(const std::vector<LanguagePair>& pairs) {
  std::vector<std::string> labels;
  for (const auto& p : pairs) labels.push_back(p.label());
  return join(labels, ",");
}

std::vector<LanguagePair> parse_pairs(const std::string& value) {
  std::vector<LanguagePair> out;
  for (const auto& item : split_list(value)) out.push_back(LanguagePair::parse(item));
  return out;
}

bool same_set(std::vector<LanguagePair> a, std::vector<LanguagePair> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

template <typename T>
bool has_duplicates(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

Tensor normalize_rows(const Tensor& t) {
  std::vector<double> v(t.values().begin(), t.values().end());
  const std::size_t d = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) ss += v[r * d + c] * v[r * d + c];
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t c = 0; c < d; ++c) v[r * d + c] *= inv;
  }
  return Tensor::from(t.shape(), std::move(v));
}

baselines::OrthogonalMap transpose(const baselines::OrthogonalMap& w) {
  baselines::OrthogonalMap t{w.dim, std::vector<double>(w.matrix.size())};
  for (std::size_t i = 0; i < w.dim; ++i)
    for (std::size_t j = 0; j < w.dim; ++j) t.matrix[j * w.dim + i] = w.matrix[i * w.dim + j];
  return t;
}

Examples side_examples(const std::vector<PhrasePairRecord>& records, bool source, bool bare) {
  Examples out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (bare) {
      out.push_back({encoder::bare_phrase_example(source ? r.source : r.target)});
    } else {
      out.push_back(source ? r.source_examples : r.target_examples);
    }
  }
  return out;
}

Tensor side_rows(const encoder::PhraseEncoder& enc, const std::vector<PhrasePairRecord>& records, bool source,
                 const EvalOptions& options) {
  retrieval::IndexOptions io;
  io.use_projection = options.use_projection;
  io.layer = options.layer;
  io.max_sentences = options.max_sentences;
  return retrieval::represent_all(enc, side_examples(records, source, options.bare_phrases), io);
}

// A model is a trained encoder, or a frozen encoder plus a cross-lingual map.
struct Model {
  encoder::PhraseEncoder encoder;
  EvalOptions eval;
  std::optional<baselines::OrthogonalMap> map;

  PairAccuracy evaluate(const std::vector<PhrasePairRecord>& test, std::size_t max_sentences) const {
    EvalOptions o = eval;
    o.max_sentences = max_sentences;
    o.map = map ? &*map : nullptr;
    return evaluate_pair(encoder, test, o);
  }
};

json key_json(const CellKey& k) {
  json j;
  j["setting"] = k.setting;
  j["method"] = k.method;
  j["variant"] = k.variant;
  j["train"] = k.train;
  j["eval"] = k.eval;
  if (!k.axis.empty()) {
    j["axis"] = k.axis;
    j["curve"] = k.curve;
    j["value"] = k.value;
  }
  return j;
}

CellKey key_from_json(const json& j) {
  CellKey k;
  k.setting = j.at("setting").get<std::string>();
  k.method = j.at("method").get<std::string>();
  k.variant = j.at("variant").get<std::string>();
  k.train = j.at("train").get<std::string>();
  k.eval = j.at("eval").get<std::string>();
  if (j.contains("axis")) {
    k.axis = j.at("axis").get<std::string>();
    k.curve = j.at("curve").get<std::string>();
    k.value = j.at("value").get<std::size_t>();
  }
  return k;
}

json accuracy_json(json j, const PairAccuracy& a, bool with_norm) {
  j["forward"] = a.forward;
  j["backward"] = a.backward;
  j["mean"] = a.mean;
  if (with_norm) j["norm_deviation"] = a.norm_deviation;
  return j;
}

double max_norm_deviation(const Tensor& rows) {
  double worst = 0.0;
  const std::size_t d = rows.cols();
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) ss += rows.values()[r * d + c] * rows.values()[r * d + c];
    worst = std::max(worst, std::abs(std::sqrt(ss) - 1.0));
  }
  return worst;
}

double average(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    return kv::to_size(key, value);
  } catch (const kv::ParseError& e) {
    throw SpecError(e.what());
  }
}

// Runs the protocol for one spec. Trained models are cached by (training pairs, seed, config).
class Runner {
 public:
  Runner(const ExperimentSpec& spec, const CorpusSource& source) : spec_(spec) {
    spec_.validate();
    for (auto seed : spec_.seeds) {
      Corpora c = source(seed);
      std::vector<std::string> missing;
      for (const auto& p : spec_.named_pairs()) {
        if (!c.pairs.count(p.label())) missing.push_back(p.label());
      }
      if (!missing.empty()) {
        throw SpecError("eval: no corpus for pair(s) " + join(missing, ", ") + " (seed " + std::to_string(seed) + ")");
      }
      for (const auto& p : spec_.named_pairs()) {
        const auto& d = c.at(p);
        if (d.test.empty()) throw SpecError("eval: pair " + p.label() + " has no test records");
        if (spec_.setting != Setting::kUnsupervised && d.train.empty()) {
          throw SpecError("eval: pair " + p.label() + " has no training records");
        }
      }
      corpora_.emplace(seed, std::move(c));
    }
    std::vector<LanguagePair> evals = spec_.effective_eval_pairs();
    for (const auto& p : spec_.train_pairs) {
      if (std::find(evals.begin(), evals.end(), p) != evals.end()) report_.overlap.push_back(p.label());
    }
    if (spec_.setting == Setting::kZeroShot || spec_.setting == Setting::kMultilingual) {
      log_info("eval: pairs both trained and evaluated: " + (report_.overlap.empty() ? "none" : join(report_.overlap, ", ")));
    }
    report_.config = spec_.to_text();
  }

  Report run_setting() {
    for (auto seed : spec_.seeds) {
      for (const auto& unit : training_units()) {
        const Model& model = trained_or_frozen(unit, seed, spec_.train);
        for (const auto& e : eval_pairs_for(unit)) add_cell(base_key(unit, e), seed, model, e, corpus::kMaxExamples);
      }
    }
    report_.finalize();
    return std::move(report_);
  }

  Report run_sweep() {
    const Sweep& sweep = *spec_.sweep;
    for (auto seed : spec_.seeds) {
      for (const auto& unit : training_units()) {
        for (const auto& e : eval_pairs_for(unit)) {
          if (sweep.axis == SweepAxis::kSentences) {
            sentence_sweep(unit, e, seed, sweep.values);
          } else {
            layer_sweep(unit, e, seed, sweep.values);
          }
        }
      }
    }
    report_.finalize();
    return std::move(report_);
  }

 private:
  std::vector<std::vector<LanguagePair>> training_units() const {
    if (spec_.setting == Setting::kUnsupervised) return {{}};
    if (spec_.setting == Setting::kSupervised) {
      std::vector<std::vector<LanguagePair>> out;
      for (const auto& p : spec_.train_pairs) out.push_back({p});
      return out;
    }
    return {spec_.train_pairs};
  }

  std::vector<LanguagePair> eval_pairs_for(const std::vector<LanguagePair>& unit) const {
    if (spec_.setting == Setting::kSupervised) return unit;
    return spec_.eval_pairs;
  }

  CellKey base_key(const std::vector<LanguagePair>& unit, const LanguagePair& e) const {
    return {setting_name(spec_.setting), method_name(spec_.method), spec_.ablations.label(), pairs_text(unit), e.label(),
            "", "", 0};
  }

  trainer::TrainConfig resolved(const trainer::TrainConfig& base, std::uint64_t seed) const {
    trainer::TrainConfig c = base;
    c.seed = seed;
    spec_.ablations.apply(c);
    const std::size_t v = corpora_.at(seed).vocab_size;
    if (c.encoder.vocab_size == 0) c.encoder.vocab_size = v;
    if (c.encoder.vocab_size < v) {
      throw SpecError("eval: encoder.vocab_size " + std::to_string(c.encoder.vocab_size) + " is below the corpus vocabulary of " +
                      std::to_string(v));
    }
    return c;
  }

  const Model& untrained(std::uint64_t seed, std::optional<std::size_t> layer) {
    const auto c = resolved(spec_.train, seed);
    const std::string key = "untrained|" + std::to_string(seed) + "|" + c.to_text();
    if (auto it = models_.find(key); it != models_.end()) return it->second;
    Model m{trainer::initial_encoder(c), {}, std::nullopt};
    m.eval.use_projection = false;
    m.eval.layer = encoder::untrained_representation_layer(c.encoder);
    (void)layer;
    return models_.emplace(key, std::move(m)).first->second;
  }

  const Model& trained_or_frozen(const std::vector<LanguagePair>& unit, std::uint64_t seed,
                                 const trainer::TrainConfig& base) {
    if (unit.empty()) return untrained(seed, std::nullopt);
    const auto c = resolved(base, seed);
    const std::string key = pairs_text(unit) + "|" + std::to_string(seed) + "|" + method_name(spec_.method) + "|" + c.to_text();
    if (auto it = models_.find(key); it != models_.end()) return it->second;
    std::vector<PhrasePairRecord> records;
    for (const auto& p : unit) {
      const auto& d = corpora_.at(seed).at(p);
      records.insert(records.end(), d.train.begin(), d.train.end());
    }
    Model m;
    const auto t0 = std::chrono::steady_clock::now();
    if (spec_.method == Method::kCse) {
      m.encoder = trainer::initial_encoder(c);
      m.eval.use_projection = false;
      m.eval.layer = encoder::middle_layer(c.encoder);
      const Tensor src = side_rows(m.encoder, records, true, m.eval);
      const Tensor tgt = side_rows(m.encoder, records, false, m.eval);
      m.map = baselines::fit_orthogonal_map(src, tgt);
    } else {
      log_info("eval: training on " + pairs_text(unit) + " (" + std::to_string(records.size()) + " records, seed " +
               std::to_string(seed) + ")");
      m.encoder = std::move(trainer::train(records, c).state.online);
      m.eval.use_projection = c.contrast.use_projection_head;
      m.eval.bare_phrases = !c.use_example_sentences;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", secs);
    log_info("eval: model for " + pairs_text(unit) + " seed " + std::to_string(seed) + " ready in " + buf + " s");
    return models_.emplace(key, std::move(m)).first->second;
  }

  void add_cell(const CellKey& key, std::uint64_t seed, const Model& model, const LanguagePair& e, std::size_t max_sentences) {
    CellResult cell{key, seed, model.evaluate(corpora_.at(seed).at(e).test, max_sentences)};
    char buf[160];
    std::snprintf(buf, sizeof buf, "eval: %s %s seed %llu: %.4f", cell.key.eval.c_str(),
                  (cell.key.curve.empty() ? cell.key.variant : cell.key.curve + "@" + std::to_string(cell.key.value)).c_str(),
                  static_cast<unsigned long long>(seed), cell.accuracy.mean);
    log_info(buf);
    report_.cells.push_back(std::move(cell));
  }

  void sentence_sweep(const std::vector<LanguagePair>& unit, const LanguagePair& e, std::uint64_t seed,
                      const std::vector<std::size_t>& values) {
    CellKey key = base_key(unit, e);
    key.axis = axis_name(SweepAxis::kSentences);
    if (unit.empty()) {
      key.curve = "untrained";
      for (auto v : values) {
        key.value = v;
        add_cell(key, seed, untrained(seed, std::nullopt), e, v);
      }
      return;
    }
    const std::size_t vmax = *std::max_element(values.begin(), values.end());
    for (auto v : values) {
      if (!spec_.sweep->runs("a")) break;
      trainer::TrainConfig c = spec_.train;
      c.sentences_per_phrase = v;
      key.curve = "a";
      key.value = v;
      add_cell(key, seed, trained_or_frozen(unit, seed, c), e, v);
    }
    trainer::TrainConfig c = spec_.train;
    c.sentences_per_phrase = vmax;
    for (auto v : values) {
      if (!spec_.sweep->runs("b")) break;
      key.curve = "b";
      key.value = v;
      add_cell(key, seed, trained_or_frozen(unit, seed, c), e, v);
    }
  }

  void layer_sweep(const std::vector<LanguagePair>& unit, const LanguagePair& e, std::uint64_t seed,
                   const std::vector<std::size_t>& values) {
    CellKey key = base_key(unit, e);
    key.axis = axis_name(SweepAxis::kLayer);
    for (auto v : values) {
      key.value = v;
      if (!unit.empty() && spec_.sweep->runs("trained")) {
        trainer::TrainConfig c = spec_.train;
        c.encoder.representation_layer = v;
        key.curve = "trained";
        Model m = trained_or_frozen(unit, seed, c);
        if (spec_.method == Method::kCse) {
          // The frozen baseline refits its map on the requested layer.
          m.eval.layer = v;
          std::vector<PhrasePairRecord> records;
          for (const auto& p : unit) {
            const auto& d = corpora_.at(seed).at(p);
            records.insert(records.end(), d.train.begin(), d.train.end());
          }
          m.map = baselines::fit_orthogonal_map(side_rows(m.encoder, records, true, m.eval),
                                                side_rows(m.encoder, records, false, m.eval));
        }
        add_cell(key, seed, m, e, corpus::kMaxExamples);
      }
      if (!spec_.sweep->runs("untrained")) continue;
      Model frozen = untrained(seed, std::nullopt);
      frozen.eval.layer = v;
      key.curve = "untrained";
      add_cell(key, seed, frozen, e, corpus::kMaxExamples);
    }
  }

  ExperimentSpec spec_;
  std::map<std::uint64_t, Corpora> corpora_;
  std::map<std::string, Model> models_;
  Report report_;
};

}  // namespace

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::kUnsupervised: return "unsupervised";
    case Setting::kSupervised: return "supervised";
    case Setting::kZeroShot: return "zero_shot";
    case Setting::kMultilingual: return "multilingual";
  }
  return "?";
}

bool Sweep::runs(const std::string& curve) const {
  return curves.empty() || std::find(curves.begin(), curves.end(), curve) != curves.end();
}

std::string method_name(Method m) { return m == Method::kXpco ? "xpco" : "cse"; }
std::string axis_name(SweepAxis a) { return a == SweepAxis::kSentences ? "sentences" : "layer"; }

LanguagePair LanguagePair::parse(const std::string& text) {
  const auto dash = text.find('-');
  LanguagePair p;
  if (dash != std::string::npos) {
    p.source = kv::trim(text.substr(0, dash));
    p.target = kv::trim(text.substr(dash + 1));
  }
  if (p.source.empty() || p.target.empty() || p.target.find('-') != std::string::npos) {
    throw SpecError("eval: language pair '" + text + "' is not of the form SRC-TGT");
  }
  if (p.source == p.target) throw SpecError("eval: language pair '" + text + "' names the same language twice");
  return p;
}

std::string Ablations::label() const {
  std::vector<std::string> on;
  if (no_example_sentence) on.push_back("no_example_sentence");
  if (no_momentum) on.push_back("no_momentum");
  if (no_projection) on.push_back("no_projection");
  if (moco_queue) on.push_back("moco_queue");
  return on.empty() ? "full" : join(on, "+");
}

void Ablations::apply(trainer::TrainConfig& config) const {
  if (no_example_sentence) config.use_example_sentences = false;
  if (no_momentum) config.contrast.use_momentum_encoder = false;
  if (no_projection) config.contrast.use_projection_head = false;
  if (moco_queue && config.contrast.moco_queue_length == 0) config.contrast.moco_queue_length = contrast::kDefaultQueueCapacity;
}

trainer::TrainConfig desk_train_config() {
  trainer::TrainConfig c;
  c.contrast.momentum = 0.99;
  return c;
}

ExperimentSpec ExperimentSpec::parse(const std::string& text) {
  ExperimentSpec spec;
  std::vector<std::pair<std::string, std::string>> lines;
  try {
    lines = kv::parse_lines(text);
  } catch (const kv::ParseError& e) {
    throw SpecError(std::string("spec: ") + e.what());
  }
  for (const auto& [key, value] : lines) {
    try {
      spec.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw SpecError("spec: " + key + ": " + e.what());
    }
  }
  spec.validate();
  return spec;
}

ExperimentSpec ExperimentSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("eval: cannot read spec file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentSpec::set(const std::string& key, const std::string& value) {
  if (key == "setting") {
    if (value == "unsupervised") setting = Setting::kUnsupervised;
    else if (value == "supervised") setting = Setting::kSupervised;
    else if (value == "zero_shot") setting = Setting::kZeroShot;
    else if (value == "multilingual") setting = Setting::kMultilingual;
    else throw SpecError("unknown setting '" + value + "'");
  } else if (key == "method") {
    if (value == "xpco") method = Method::kXpco;
    else if (value == "cse") method = Method::kCse;
    else throw SpecError("unknown method '" + value + "'");
  } else if (key == "train_pairs") {
    train_pairs = parse_pairs(value);
  } else if (key == "eval_pairs") {
    eval_pairs = parse_pairs(value);
  } else if (key == "ablations") {
    ablations = {};
    for (const auto& flag : split_list(value)) {
      if (flag == "none") continue;
      if (flag == "no_example_sentence") ablations.no_example_sentence = true;
      else if (flag == "no_momentum") ablations.no_momentum = true;
      else if (flag == "no_projection") ablations.no_projection = true;
      else if (flag == "moco_queue") ablations.moco_queue = true;
      else throw SpecError("unknown ablation '" + flag + "'");
    }
  } else if (key == "sweep") {
    if (value == "none" || value.empty()) {
      sweep.reset();
      return;
    }
    const auto colon = value.find(':');
    if (colon == std::string::npos) throw SpecError("sweep must look like 'sentences:1,2,4' or 'layer:1,2'");
    Sweep s;
    const std::string axis = kv::trim(value.substr(0, colon));
    if (axis == "sentences") s.axis = SweepAxis::kSentences;
    else if (axis == "layer") s.axis = SweepAxis::kLayer;
    else throw SpecError("unknown sweep axis '" + axis + "'");
    for (const auto& v : split_list(value.substr(colon + 1))) s.values.push_back(parse_size("sweep", v));
    s.curves = sweep ? sweep->curves : std::vector<std::string>{};
    sweep = std::move(s);
  } else if (key == "sweep_curves") {
    if (!sweep) throw SpecError("sweep_curves must follow a sweep line");
    sweep->curves = split_list(value);
  } else if (key == "seeds") {
    seeds.clear();
    for (const auto& v : split_list(value)) seeds.push_back(parse_size("seeds", v));
  } else if (key == "test_size") {
    test_size = parse_size(key, value);
  } else if (key.rfind("synthetic.", 0) == 0) {
    const std::string field = key.substr(10);
    if (field == "vocab_size") synthetic.vocab_size = parse_size(key, value);
    else if (field == "n_pairs") synthetic.n_pairs = parse_size(key, value);
    else if (field == "sentences_per_phrase") synthetic.sentences_per_phrase = parse_size(key, value);
    else if (field == "num_languages") synthetic.num_languages = parse_size(key, value);
    else if (field == "ambiguous") synthetic.ambiguous = kv::to_bool(key, value);
    else if (field == "ambiguity_group") synthetic.ambiguity_group = parse_size(key, value);
    else if (field == "phrase_word_share") synthetic.phrase_word_share = kv::to_double(key, value);
    else if (field == "anchor_rate") synthetic.anchor_rate = kv::to_double(key, value);
    else if (field == "topic_rate") synthetic.topic_rate = kv::to_double(key, value);
    else throw SpecError("unknown key '" + key + "'");
  } else if (key.rfind("corpus.", 0) == 0) {
    corpus_files[LanguagePair::parse(key.substr(7)).label()] = value;
  } else if (key.rfind("train.", 0) == 0) {
    train.set(key.substr(6), value);
  } else {
    throw SpecError("unknown key '" + key + "'");
  }
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw SpecError("eval: at least one seed is required");
  if (has_duplicates(seeds)) throw SpecError("eval: seeds must be distinct");
  if (test_size == 0) throw SpecError("eval: test_size must be positive");
  if (has_duplicates(train_pairs) || has_duplicates(eval_pairs)) throw SpecError("eval: a language pair is listed twice");
  switch (setting) {
    case Setting::kUnsupervised:
      if (!train_pairs.empty()) throw SpecError("eval: the unsupervised setting forbids training pairs");
      if (method != Method::kXpco) throw SpecError("eval: the cse baseline needs training pairs for its map");
      if (eval_pairs.empty()) throw SpecError("eval: no evaluation pairs");
      if (ablations.label() != "full") throw SpecError("eval: ablations need a trained setting");
      break;
    case Setting::kSupervised:
      if (train_pairs.empty()) throw SpecError("eval: supervised setting needs training pairs");
      if (!eval_pairs.empty() && !same_set(eval_pairs, train_pairs)) {
        throw SpecError("eval: supervised setting evaluates each training pair; eval_pairs must be empty or equal train_pairs");
      }
      break;
    case Setting::kZeroShot:
      if (train_pairs.size() != 1) throw SpecError("eval: zero_shot trains on exactly one language pair");
      if (eval_pairs.empty()) throw SpecError("eval: no evaluation pairs");
      break;
    case Setting::kMultilingual:
      if (train_pairs.empty()) throw SpecError("eval: multilingual setting needs training pairs");
      if (eval_pairs.empty()) throw SpecError("eval: no evaluation pairs");
      break;
  }
  if (method == Method::kCse && ablations.label() != "full") throw SpecError("eval: ablations apply to xpco training only");
  if (sweep) {
    if (sweep->values.empty()) throw SpecError("eval: sweep has no values");
    if (has_duplicates(sweep->values)) throw SpecError("eval: sweep values must be distinct");
    for (const auto& c : sweep->curves) {
      const bool ok = sweep->axis == SweepAxis::kSentences ? (c == "a" || c == "b") : (c == "trained" || c == "untrained");
      if (!ok) throw SpecError("eval: unknown curve '" + c + "' for a " + axis_name(sweep->axis) + " sweep");
    }
    for (auto v : sweep->values) {
      if (sweep->axis == SweepAxis::kSentences) {
        const std::size_t cap = corpus_files.empty() ? synthetic.sentences_per_phrase : corpus::kMaxExamples;
        if (v == 0 || v > cap) {
          throw SpecError("eval: sentence sweep value " + std::to_string(v) + " outside [1, " + std::to_string(cap) + "]");
        }
        if (ablations.no_example_sentence) throw SpecError("eval: a sentence sweep needs example sentences");
      } else if (v == 0 || v > train.encoder.num_layers) {
        throw SpecError("eval: layer sweep value " + std::to_string(v) + " outside [1, " +
                        std::to_string(train.encoder.num_layers) + "]");
      }
    }
  }
  trainer::TrainConfig probe = train;
  if (probe.encoder.vocab_size == 0) probe.encoder.vocab_size = 2;
  ablations.apply(probe);
  try {
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw SpecError(std::string("eval: training config: ") + e.what());
  }
}

std::vector<LanguagePair> ExperimentSpec::named_pairs() const {
  std::vector<LanguagePair> out;
  for (const auto* list : {&train_pairs, &eval_pairs}) {
    for (const auto& p : *list) {
      if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
  }
  return out;
}

std::vector<LanguagePair> ExperimentSpec::effective_eval_pairs() const {
  return setting == Setting::kSupervised && eval_pairs.empty() ? train_pairs : eval_pairs;
}

std::string ExperimentSpec::to_text() const {
  std::ostringstream out;
  out << "setting = " << setting_name(setting) << "\n"
      << "method = " << method_name(method) << "\n"
      << "train_pairs = " << pairs_text(train_pairs) << "\n"
      << "eval_pairs = " << pairs_text(eval_pairs) << "\n"
      << "ablations = " << (ablations.label() == "full" ? "none" : ablations.label()) << "\n";
  if (sweep) {
    std::vector<std::string> vs;
    for (auto v : sweep->values) vs.push_back(std::to_string(v));
    out << "sweep = " << axis_name(sweep->axis) << ":" << join(vs, ",") << "\n";
    if (!sweep->curves.empty()) out << "sweep_curves = " << join(sweep->curves, ",") << "\n";
  } else {
    out << "sweep = none\n";
  }
  std::vector<std::string> ss;
  for (auto s : seeds) ss.push_back(std::to_string(s));
  out << "seeds = " << join(ss, ",") << "\n"
      << "test_size = " << test_size << "\n";
  if (corpus_files.empty()) {
    out << "synthetic.vocab_size = " << synthetic.vocab_size << "\n"
        << "synthetic.n_pairs = " << synthetic.n_pairs << "\n"
        << "synthetic.sentences_per_phrase = " << synthetic.sentences_per_phrase << "\n"
        << "synthetic.num_languages = " << synthetic.num_languages << "\n"
        << "synthetic.ambiguous = " << (synthetic.ambiguous ? "true" : "false") << "\n"
        << "synthetic.ambiguity_group = " << synthetic.ambiguity_group << "\n"
        << "synthetic.phrase_word_share = " << kv::format_double(synthetic.phrase_word_share) << "\n"
        << "synthetic.anchor_rate = " << kv::format_double(synthetic.anchor_rate) << "\n"
        << "synthetic.topic_rate = " << kv::format_double(synthetic.topic_rate) << "\n";
  }
  for (const auto& [pair, path] : corpus_files) out << "corpus." << pair << " = " << path << "\n";
  std::istringstream lines(train.to_text());
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) out << "train." << line << "\n";
  }
  return out.str();
}

const PairData& Corpora::at(const LanguagePair& pair) const {
  const auto it = pairs.find(pair.label());
  if (it == pairs.end()) throw SpecError("eval: no corpus for pair " + pair.label());
  return it->second;
}

CorpusSource default_corpus_source(const ExperimentSpec& spec) {
  if (!spec.corpus_files.empty()) {
    Corpora loaded;
    std::optional<corpus::Vocabulary> shared;
    for (const auto& [label, path] : spec.corpus_files) {
      const auto vocab = corpus::Vocabulary::load(corpus::sidecar_vocabulary_path(path));
      if (shared && !(*shared == vocab)) throw SpecError("eval: corpus " + path + " uses a different vocabulary");
      shared = vocab;
      const auto records = corpus::load_corpus(path, vocab);
      if (spec.test_size >= records.size()) {
        throw SpecError("eval: corpus " + path + " has " + std::to_string(records.size()) + " records, too few for a test split of " +
                        std::to_string(spec.test_size));
      }
      const auto split = synth::split_train_test(records, spec.test_size);
      loaded.pairs[label] = {split.train, split.test};
    }
    loaded.vocab_size = shared->size();
    return [loaded](std::uint64_t) { return loaded; };
  }
  const auto options = spec.synthetic;
  const auto pairs = spec.named_pairs();
  const std::size_t test_size = spec.test_size;
  return [options, pairs, test_size](std::uint64_t seed) {
    auto o = options;
    o.seed = seed;
    const auto sc = synth::generate_synthetic_languages(o);
    Corpora c;
    c.vocab_size = sc.vocab.size();
    for (const auto& p : pairs) {
      std::size_t s = 0, t = 0;
      try {
        s = sc.language_index(p.source);
        t = sc.language_index(p.target);
      } catch (const std::invalid_argument&) {
        continue;  // reported as a missing corpus
      }
      const auto split = synth::split_train_test(sc.pair_records(s, t), test_size);
      c.pairs[p.label()] = {split.train, split.test};
    }
    return c;
  };
}

PairAccuracy evaluate_pair(const encoder::PhraseEncoder& enc, const std::vector<PhrasePairRecord>& test,
                           const EvalOptions& options) {
  if (test.empty()) throw std::invalid_argument("evaluate_pair: no test records");
  std::vector<std::string> sid, tid;
  for (const auto& r : test) {
    sid.push_back(r.source.id);
    tid.push_back(r.target.id);
  }
  Tensor s = side_rows(enc, test, true, options);
  Tensor t = side_rows(enc, test, false, options);
  Tensor sq = s, tq = t;
  if (options.map) {
    sq = normalize_rows(options.map->apply(s));
    tq = normalize_rows(transpose(*options.map).apply(t));
  }
  PairAccuracy a;
  a.forward = retrieval::accuracy_at_1(retrieval::index_from_rows(tid, t), sq, tid);
  a.backward = retrieval::accuracy_at_1(retrieval::index_from_rows(sid, s), tq, sid);
  a.mean = 0.5 * (a.forward + a.backward);
  for (const Tensor* rows : {&s, &t, &sq, &tq}) a.norm_deviation = std::max(a.norm_deviation, max_norm_deviation(*rows));
  return a;
}

void Report::finalize() {
  means.clear();
  std::vector<CellKey> order;
  std::map<CellKey, std::vector<const CellResult*>> groups;
  for (const auto& c : cells) {
    auto& g = groups[c.key];
    if (g.empty()) order.push_back(c.key);
    g.push_back(&c);
  }
  for (const auto& key : order) {
    CellMean m{key, {}, {}};
    std::vector<double> f, b, mean;
    for (const auto* c : groups[key]) {
      m.seeds.push_back(c->seed);
      f.push_back(c->accuracy.forward);
      b.push_back(c->accuracy.backward);
      mean.push_back(c->accuracy.mean);
    }
    m.accuracy = {average(f), average(b), average(mean), 0.0};
    for (const auto* c : groups[key]) m.accuracy.norm_deviation = std::max(m.accuracy.norm_deviation, c->accuracy.norm_deviation);
    means.push_back(std::move(m));
  }
}

const CellMean* Report::mean_of(const CellKey& key) const {
  for (const auto& m : means)
    if (m.key == key) return &m;
  return nullptr;
}

std::vector<const CellMean*> Report::means_where(const std::function<bool(const CellKey&)>& pred) const {
  std::vector<const CellMean*> out;
  for (const auto& m : means)
    if (pred(m.key)) out.push_back(&m);
  return out;
}

std::string Report::to_jsonl() const {
  std::string out;
  json config_rec;
  config_rec["record"] = "config";
  config_rec["spec"] = config;
  out += config_rec.dump() + "\n";
  json overlap_rec;
  overlap_rec["record"] = "overlap";
  overlap_rec["pairs"] = overlap;
  out += overlap_rec.dump() + "\n";
  for (const auto& c : cells) {
    json j;
    j["record"] = "cell";
    j.update(key_json(c.key));
    j["seed"] = c.seed;
    out += accuracy_json(std::move(j), c.accuracy, true).dump() + "\n";
  }
  for (const auto& m : means) {
    json j;
    j["record"] = "mean";
    j.update(key_json(m.key));
    j["seeds"] = m.seeds;
    out += accuracy_json(std::move(j), m.accuracy, false).dump() + "\n";
  }
  return out;
}

std::string Report::table() const {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-13s %-5s %-22s %-10s %-6s %-14s %8s %8s %8s\n", "setting", "meth", "variant", "train", "eval",
                "sweep", "fwd", "bwd", "mean");
  out << buf;
  for (const auto& m : means) {
    const std::string sweep = m.key.axis.empty() ? "-" : m.key.axis + "/" + m.key.curve + "=" + std::to_string(m.key.value);
    std::snprintf(buf, sizeof buf, "%-13s %-5s %-22s %-10s %-6s %-14s %8.4f %8.4f %8.4f\n", m.key.setting.c_str(),
                  m.key.method.c_str(), m.key.variant.c_str(), m.key.train.empty() ? "-" : m.key.train.c_str(),
                  m.key.eval.c_str(), sweep.c_str(), m.accuracy.forward, m.accuracy.backward, m.accuracy.mean);
    out << buf;
  }
  return out.str();
}

std::size_t verify_report_means(const std::string& jsonl) {
  std::map<CellKey, std::vector<json>> cells;
  std::vector<json> means;
  std::istringstream in(jsonl);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("report line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto kind = j.at("record").get<std::string>();
    if (kind == "cell") {
      const double f = j.at("forward"), b = j.at("backward"), m = j.at("mean");
      if (m != 0.5 * (f + b)) throw std::runtime_error("report line " + std::to_string(line_no) + ": cell mean is not (forward + backward) / 2");
      cells[key_from_json(j)].push_back(j);
    } else if (kind == "mean") {
      means.push_back(j);
    }
  }
  for (const auto& m : means) {
    const auto key = key_from_json(m);
    const auto it = cells.find(key);
    if (it == cells.end()) throw std::runtime_error("report: mean record without cells for " + key.eval);
    std::vector<std::uint64_t> seeds;
    std::vector<double> f, b, mean;
    for (const auto& c : it->second) {
      seeds.push_back(c.at("seed"));
      f.push_back(c.at("forward"));
      b.push_back(c.at("backward"));
      mean.push_back(c.at("mean"));
    }
    if (seeds != m.at("seeds").get<std::vector<std::uint64_t>>()) throw std::runtime_error("report: seed list mismatch for " + key.eval);
    if (average(f) != m.at("forward").get<double>() || average(b) != m.at("backward").get<double>() ||
        average(mean) != m.at("mean").get<double>()) {
      throw std::runtime_error("report: mean differs from its cells for " + key.eval);
    }
  }
  return means.size();
}

Report run_setting(const ExperimentSpec& spec, const CorpusSource& source) { return Runner(spec, source).run_setting(); }
Report run_setting(const ExperimentSpec& spec) { return run_setting(spec, default_corpus_source(spec)); }

Report run_sweep(const ExperimentSpec& spec, const CorpusSource& source) {
  if (!spec.sweep) throw SpecError("eval: run_sweep needs a sweep axis");
  return Runner(spec, source).run_sweep();
}
Report run_sweep(const ExperimentSpec& spec) { return run_sweep(spec, default_corpus_source(spec)); }

Report run_experiment(const ExperimentSpec& spec, const CorpusSource& source) {
  return spec.sweep ? run_sweep(spec, source) : run_setting(spec, source);
}
Report run_experiment(const ExperimentSpec& spec) { return run_experiment(spec, default_corpus_source(spec)); }

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mx = average(rx), my = average(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace xphrase::eval
