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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xphrase/baselines.hpp"
#include "xphrase/corpus.hpp"
#include "xphrase/encoder.hpp"
#include "xphrase/keyvalue.hpp"
#include "xphrase/synthetic.hpp"
#include "xphrase/trainer.hpp"

// Experiment protocol: evaluation settings, ablations and sweeps over
// synthetic or user-supplied corpora, with line-delimited JSON reports.
namespace xphrase::eval {

class SpecError : public kv::ParseError {
 public:
  using kv::ParseError::ParseError;
};

enum class Setting { kUnsupervised, kSupervised, kZeroShot, kMultilingual };
enum class Method { kXpco, kCse };
enum class SweepAxis { kSentences, kLayer };

std::string setting_name(Setting s);
std::string method_name(Method m);
std::string axis_name(SweepAxis a);

struct LanguagePair {
  std::string source;
  std::string target;

  std::string label() const { return source + "-" + target; }
  static LanguagePair parse(const std::string& text);  // "A-B"
  bool operator==(const LanguagePair&) const = default;
  auto operator<=>(const LanguagePair&) const = default;
};

struct Ablations {
  bool no_example_sentence = false;
  bool no_momentum = false;
  bool no_projection = false;
  bool moco_queue = false;

  // "full", or the active flags joined by '+'.
  std::string label() const;
  void apply(trainer::TrainConfig& config) const;
};

struct Sweep {
  SweepAxis axis = SweepAxis::kSentences;
  std::vector<std::size_t> values;
  // Subset of {"a", "b"} (sentences) or {"trained", "untrained"} (layer); empty runs all.
  std::vector<std::string> curves;

  bool runs(const std::string& curve) const;
};

// Training defaults sized for a single desktop CPU.
trainer::TrainConfig desk_train_config();

struct ExperimentSpec {
  Setting setting = Setting::kSupervised;
  Method method = Method::kXpco;
  std::vector<LanguagePair> train_pairs;
  std::vector<LanguagePair> eval_pairs;  // supervised: defaults to train_pairs
  Ablations ablations;
  std::optional<Sweep> sweep;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t test_size = 100;
  // Synthetic data is regenerated per seed; its own seed field is ignored.
  synth::SyntheticOptions synthetic;
  // Pair label -> corpus file. When non-empty, replaces the synthetic data.
  std::map<std::string, std::string> corpus_files;
  trainer::TrainConfig train = desk_train_config();

  // Flat "key = value" text. Keys: setting, method, train_pairs, eval_pairs,
  // ablations, sweep (axis:v1,v2,...), sweep_curves, seeds, test_size, synthetic.<field>,
  // corpus.<pair>, train.<trainer key>.
  static ExperimentSpec parse(const std::string& text);
  static ExperimentSpec load(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
  // Every pair the run reads, in first-use order.
  std::vector<LanguagePair> named_pairs() const;
  std::vector<LanguagePair> effective_eval_pairs() const;
};

struct PairData {
  std::vector<corpus::PhrasePairRecord> train;
  std::vector<corpus::PhrasePairRecord> test;
};

struct Corpora {
  std::size_t vocab_size = 0;
  std::map<std::string, PairData> pairs;  // by pair label

  const PairData& at(const LanguagePair& pair) const;
};

// Seed -> corpora; called once per seed before any training starts.
using CorpusSource = std::function<Corpora(std::uint64_t seed)>;

// Synthetic languages for `seed`, or the spec's corpus files split into train/test.
CorpusSource default_corpus_source(const ExperimentSpec& spec);

struct PairAccuracy {
  double forward = 0.0;   // source queries against target candidates
  double backward = 0.0;  // target queries against source candidates
  double mean = 0.0;
  // Largest | |row| - 1 | over every query and candidate row.
  double norm_deviation = 0.0;
};

struct EvalOptions {
  bool use_projection = true;
  std::optional<std::size_t> layer;
  std::size_t max_sentences = corpus::kMaxExamples;
  // Encode each phrase from its own tokens instead of its example sentences.
  bool bare_phrases = false;
  // Source-side representations are mapped into the target space.
  const baselines::OrthogonalMap* map = nullptr;
};

PairAccuracy evaluate_pair(const encoder::PhraseEncoder& enc, const std::vector<corpus::PhrasePairRecord>& test,
                           const EvalOptions& options = {});

struct CellKey {
  std::string setting;
  std::string method;
  std::string variant;
  std::string train;  // training pairs joined by ',' ("" when untrained)
  std::string eval;
  std::string axis;   // "" without a sweep
  std::string curve;
  std::size_t value = 0;

  auto operator<=>(const CellKey&) const = default;
};

struct CellResult {
  CellKey key;
  std::uint64_t seed = 0;
  PairAccuracy accuracy;
  double train_seconds = 0.0;
};

struct CellMean {
  CellKey key;
  std::vector<std::uint64_t> seeds;
  PairAccuracy accuracy;
};

struct Report {
  std::string config;
  std::vector<std::string> overlap;  // pairs both trained and evaluated on
  std::vector<CellResult> cells;
  std::vector<CellMean> means;

  // Recomputes `means` from `cells`, grouping by key in first-appearance order.
  void finalize();
  const CellMean* mean_of(const CellKey& key) const;
  std::vector<const CellMean*> means_where(const std::function<bool(const CellKey&)>& pred) const;
  std::string to_jsonl() const;
  std::string table() const;
};

// Parses a report and checks that every mean equals the mean of its cells.
// Returns the number of mean records checked; throws on the first mismatch.
std::size_t verify_report_means(const std::string& jsonl);

Report run_setting(const ExperimentSpec& spec, const CorpusSource& source);
Report run_setting(const ExperimentSpec& spec);
Report run_sweep(const ExperimentSpec& spec, const CorpusSource& source);
Report run_sweep(const ExperimentSpec& spec);
// run_sweep when the spec has a sweep, run_setting otherwise.
Report run_experiment(const ExperimentSpec& spec, const CorpusSource& source);
Report run_experiment(const ExperimentSpec& spec);

// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace xphrase::eval
