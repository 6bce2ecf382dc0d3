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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "test_support.hpp"
#include "xphrase/evalharness.hpp"
#include "xphrase/log.hpp"
#include "xphrase/retrieval.hpp"

using namespace xphrase;
using namespace xphrase::eval;

namespace {

struct QuietLogs {
  QuietLogs() { set_log_level(LogLevel::kWarn); }
  ~QuietLogs() { set_log_level(LogLevel::kInfo); }
};

ExperimentSpec tiny_spec(Setting setting) {
  ExperimentSpec s;
  s.setting = setting;
  s.synthetic.vocab_size = 80;
  s.synthetic.n_pairs = 48;
  s.synthetic.sentences_per_phrase = 4;
  s.synthetic.phrase_word_share = 0.5;
  s.test_size = 16;
  s.seeds = {1, 2, 3};
  auto& e = s.train.encoder;
  e.hidden_dim = 16;
  e.num_layers = 2;
  e.num_heads = 2;
  e.ffn_dim = 16;
  e.max_sequence_length = 16;
  e.projection_dim = 8;
  e.representation_layer = 2;
  s.train.batch_size = 8;
  s.train.sentences_per_phrase = 2;
  s.train.epochs = 1;
  s.train.learning_rate = 1e-3;
  if (setting == Setting::kUnsupervised) {
    s.eval_pairs = {LanguagePair::parse("A-B")};
  } else {
    s.train_pairs = {LanguagePair::parse("A-B")};
    if (setting != Setting::kSupervised) s.eval_pairs = {LanguagePair::parse("A-B"), LanguagePair::parse("A-C")};
  }
  return s;
}

synth::SyntheticOptions small_options() {
  synth::SyntheticOptions o;
  o.vocab_size = 100;
  o.n_pairs = 60;
  o.sentences_per_phrase = 5;
  o.phrase_word_share = 0.5;
  return o;
}

}  // namespace

TEST_CASE("vocabulary partition") {
  const auto b = synth::partition_vocabulary(400, 0.15);
  CHECK(b.anchors.size() == 40);
  CHECK(b.num_topics == 20);
  CHECK(b.general_words.size() == 40);
  CHECK(b.phrase_words.size() == 60);
  CHECK(b.topic_words.size() == b.num_topics * b.words_per_topic);
  std::set<std::size_t> all;
  for (const auto* part : {&b.anchors, &b.topic_words, &b.general_words, &b.phrase_words}) all.insert(part->begin(), part->end());
  CHECK(all.size() == b.anchors.size() + b.topic_words.size() + b.general_words.size() + b.phrase_words.size());
  CHECK(*all.rbegin() < 400);
}

TEST_CASE("cipher permutations obey the composition law") {
  const auto sc = synth::generate_synthetic_languages(small_options());
  const auto& A = sc.languages[0];
  const auto& B = sc.languages[1];
  const auto& C = sc.languages[2];
  const std::size_t v = sc.options.vocab_size;
  for (std::size_t w = 0; w < v; ++w) CHECK(A.permutation[w] == w);
  std::vector<std::size_t> inv_b(v), inv_c(v);
  for (std::size_t w = 0; w < v; ++w) {
    inv_b[B.permutation[w]] = w;
    inv_c[C.permutation[w]] = w;
  }
  CHECK(std::set<std::size_t>(inv_b.begin(), inv_b.end()).size() == v);
  for (std::size_t w : sc.base.anchors) CHECK(B.permutation[w] == w);
  CHECK(B.permutation != C.permutation);

  // Token-level B -> C translation read off the phrases equals pi_C o pi_B^-1.
  std::map<std::string, std::string> b_to_c;
  for (std::size_t i = 0; i < sc.num_pairs(); ++i) {
    for (std::size_t j = 0; j < sc.words[i].size(); ++j) {
      const auto& bt = sc.vocab.token(B.phrases[i].tokens[j]);
      const auto& ct = sc.vocab.token(C.phrases[i].tokens[j]);
      const auto [it, fresh] = b_to_c.emplace(bt, ct);
      CHECK(it->second == ct);
      const std::size_t base_w = sc.words[i][j];
      CHECK(bt == synth::word_surface(1, B.permutation[base_w], sc.base));
      CHECK(ct == synth::word_surface(2, C.permutation[inv_b[B.permutation[base_w]]], sc.base));
    }
  }
  // Applying a cipher twice is its square, an involution only when pi o pi = id.
  bool involution = true;
  for (std::size_t w = 0; w < v; ++w) involution = involution && B.permutation[B.permutation[w]] == w;
  std::set<std::size_t> non_fixed;
  for (std::size_t w = 0; w < v; ++w)
    if (B.permutation[w] != w) non_fixed.insert(w);
  CHECK_FALSE(involution);
  CHECK(non_fixed.size() > v / 2);
}

TEST_CASE("generated corpus passes corpus validation and is not parallel") {
  const auto sc = synth::generate_synthetic_languages(small_options());
  for (std::size_t t = 1; t < 3; ++t) {
    const auto records = sc.pair_records(0, t);
    REQUIRE(records.size() == 60);
    std::size_t identical_shape = 0;
    for (const auto& r : records) {
      CHECK_NOTHROW(corpus::validate_record(r));
      CHECK(r.source.tokens.size() == r.target.tokens.size());
      for (std::size_t k = 0; k < r.source_examples.size(); ++k) {
        const auto &a = r.source_examples[k], &b = r.target_examples[k];
        identical_shape += a.tokens.size() == b.tokens.size() && a.span_start == b.span_start;
      }
    }
    CHECK(identical_shape < 60 * 5 / 2);
  }
  const auto split = synth::split_train_test(sc.pair_records(0, 1), 10);
  CHECK(split.train.size() == 50);
  CHECK(split.test.front().id == "p50");
  CHECK_THROWS(synth::split_train_test(sc.pair_records(0, 1), 60));
}

TEST_CASE("count oracle for a 500 pair corpus") {
  synth::SyntheticOptions o;
  o.n_pairs = 500;
  o.sentences_per_phrase = 8;
  const auto sc = synth::generate_synthetic_languages(o);
  const std::size_t anchors = o.vocab_size / 10;
  CHECK(sc.vocab.size() == 2 + o.vocab_size * o.num_languages - anchors * (o.num_languages - 1));
  const auto records = sc.pair_records(0, 1);
  CHECK(records.size() == 500);
  std::set<std::string> ids;
  for (const auto& r : records) {
    ids.insert(r.id);
    CHECK(r.source_examples.size() == 8);
    CHECK(r.target_examples.size() == 8);
  }
  CHECK(ids.size() == 500);

  const auto dir = std::filesystem::temp_directory_path() / "xphrase_synth_count";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "corpus.tsv").string();
  corpus::save_corpus(records, path);
  sc.vocab.save(corpus::sidecar_vocabulary_path(path));
  CHECK(corpus::read_lines(path).size() == 500);
  CHECK(corpus::read_lines(corpus::sidecar_vocabulary_path(path)).size() == sc.vocab.size());
  const auto back = corpus::load_corpus(path, corpus::Vocabulary::load(corpus::sidecar_vocabulary_path(path)));
  CHECK(back == records);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generator determinism, ambiguity and errors") {
  const auto a = synth::generate_synthetic_languages(small_options());
  const auto b = synth::generate_synthetic_languages(small_options());
  CHECK(a.pair_records(0, 1) == b.pair_records(0, 1));
  auto o = small_options();
  o.seed = 2;
  CHECK_FALSE(synth::generate_synthetic_languages(o).pair_records(0, 1) == a.pair_records(0, 1));

  for (std::size_t group : {2u, 4u}) {
    o = small_options();
    o.ambiguous = true;
    o.ambiguity_group = group;
    const auto amb = synth::generate_synthetic_languages(o);
    for (std::size_t g = 0; g < amb.num_pairs(); g += group) {
      std::set<std::size_t> topics;
      for (std::size_t i = g; i < g + group; ++i) {
        CHECK(amb.words[i] == amb.words[g]);
        topics.insert(amb.topics[i]);
      }
      CHECK(topics.size() == group);
      if (g + group < amb.num_pairs()) CHECK(amb.words[g + group] != amb.words[g]);
    }
  }
  o = small_options();
  o.ambiguous = true;
  o.ambiguity_group = 1;
  CHECK_THROWS(synth::generate_synthetic_languages(o));
  o.ambiguity_group = 50;
  CHECK_THROWS(synth::generate_synthetic_languages(o));

  o = small_options();
  o.vocab_size = 20;
  o.n_pairs = 5000;
  CHECK_THROWS(synth::generate_synthetic_languages(o));
  o = small_options();
  o.n_pairs = 0;
  CHECK_THROWS(synth::generate_synthetic_languages(o));
  o = small_options();
  o.anchor_rate = 0.8;
  o.topic_rate = 0.5;
  CHECK_THROWS(synth::generate_synthetic_languages(o));
  CHECK(synth::language_tag(0) == "A");
  CHECK(synth::language_tag(2) == "C");
}

TEST_CASE("spec text round-trip and validation") {
  auto s = tiny_spec(Setting::kZeroShot);
  s.ablations.no_momentum = true;
  s.sweep = Sweep{SweepAxis::kSentences, {1, 2, 4}, {"b"}};
  const auto text = s.to_text();
  const auto back = ExperimentSpec::parse(text);
  CHECK(back.to_text() == text);
  CHECK(back.train.hash() == s.train.hash());
  CHECK(back.eval_pairs == s.eval_pairs);

  const auto parsed = ExperimentSpec::parse("setting = supervised\ntrain_pairs = A-B, A-C\nseeds = 4,5\n# comment\n");
  CHECK(parsed.train_pairs.size() == 2);
  CHECK(parsed.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(parsed.effective_eval_pairs() == parsed.train_pairs);
  CHECK(parsed.train.contrast.momentum == desk_train_config().contrast.momentum);

  auto rejects = [](const std::string& t) {
    INFO(t);
    CHECK_THROWS_AS(ExperimentSpec::parse(t), SpecError); };
  rejects("setting = unsupervised\ntrain_pairs = A-B\neval_pairs = A-B\n");
  rejects("setting = zero_shot\ntrain_pairs = A-B,A-C\neval_pairs = A-C\n");
  rejects("setting = supervised\ntrain_pairs = A-B\neval_pairs = A-C\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nsweep = sentences:0,2\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nsweep = sentences:1,9\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nsweep = layer:1,3\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nsweep = depth:1\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nsweep = sentences:1,2\nsweep_curves = trained\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nsweep_curves = a\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nablations = no_gravity\n");
  rejects("setting = sideways\n");
  rejects("setting = supervised\ntrain_pairs = AB\n");
  rejects("setting = supervised\ntrain_pairs = A-A\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nseeds = 1,1\n");
  rejects("setting = supervised\ntrain_pairs = A-B\ntrain.batch_size = 0\n");
  rejects("setting = supervised\ntrain_pairs = A-B\nunknown = 3\n");
  rejects("setting = supervised\ntrain_pairs = A-B\ntrain.epochs = many\n");
  CHECK_THROWS_AS(ExperimentSpec::load("/nonexistent/spec.txt"), SpecError);
}

TEST_CASE("missing corpora are reported before training") {
  QuietLogs quiet;
  auto s = tiny_spec(Setting::kZeroShot);
  s.eval_pairs = {LanguagePair::parse("A-D"), LanguagePair::parse("A-E")};
  int sourced = 0;
  const auto inner = default_corpus_source(s);
  const CorpusSource counting = [&](std::uint64_t seed) {
    ++sourced;
    return inner(seed);
  };
  try {
    run_setting(s, counting);
    FAIL("expected an error");
  } catch (const SpecError& e) {
    const std::string what = e.what();
    CHECK(what.find("A-D") != std::string::npos);
    CHECK(what.find("A-E") != std::string::npos);
  }
  // Fails while checking the first seed's corpora, before any model exists.
  CHECK(sourced == 1);
}

TEST_CASE("report structure and recomputable means") {
  QuietLogs quiet;
  const auto report = run_setting(tiny_spec(Setting::kSupervised));
  REQUIRE(report.cells.size() == 3);
  REQUIRE(report.means.size() == 1);
  CHECK(report.means[0].seeds == std::vector<std::uint64_t>{1, 2, 3});
  for (const auto& c : report.cells) {
    CHECK(c.accuracy.norm_deviation <= 1e-9);
    CHECK(c.accuracy.mean == 0.5 * (c.accuracy.forward + c.accuracy.backward));
    CHECK(c.accuracy.forward >= 0.0);
    CHECK(c.accuracy.forward <= 1.0);
  }
  const auto jsonl = report.to_jsonl();
  CHECK(verify_report_means(jsonl) == 1);
  CHECK(report.table().find("supervised") != std::string::npos);

  auto tampered = report;
  tampered.means[0].accuracy.forward += 1e-12;
  CHECK_THROWS(verify_report_means(tampered.to_jsonl()));

  CHECK(run_setting(tiny_spec(Setting::kSupervised)).to_jsonl() == jsonl);
}

TEST_CASE("zero-shot on the training pair equals supervised") {
  QuietLogs quiet;
  auto sup = tiny_spec(Setting::kSupervised);
  auto zs = tiny_spec(Setting::kZeroShot);
  sup.seeds = zs.seeds = {5};
  const auto a = run_setting(sup);
  const auto b = run_setting(zs);
  REQUIRE(b.cells.size() == 2);
  CHECK(b.cells[0].key.eval == "A-B");
  CHECK(b.cells[0].accuracy.forward == a.cells[0].accuracy.forward);
  CHECK(b.cells[0].accuracy.backward == a.cells[0].accuracy.backward);
  CHECK(b.cells[1].key.eval == "A-C");
  CHECK(b.overlap == std::vector<std::string>{"A-B"});
  CHECK(a.overlap == std::vector<std::string>{"A-B"});
  auto ml = tiny_spec(Setting::kMultilingual);
  ml.seeds = {5};
  ml.train_pairs = {LanguagePair::parse("A-C")};
  ml.eval_pairs = {LanguagePair::parse("A-B")};
  CHECK(run_setting(ml).overlap.empty());
}

TEST_CASE("unsupervised and ablation rows use the documented representations") {
  QuietLogs quiet;
  auto s = tiny_spec(Setting::kUnsupervised);
  s.seeds = {2};
  const auto report = run_setting(s);
  REQUIRE(report.cells.size() == 1);
  trainer::TrainConfig c = s.train;
  c.seed = 2;
  const auto sc = [&] {
    auto o = s.synthetic;
    o.seed = 2;
    return synth::generate_synthetic_languages(o);
  }();
  c.encoder.vocab_size = sc.vocab.size();
  const auto test = synth::split_train_test(sc.pair_records(0, 1), s.test_size).test;
  EvalOptions eo;
  eo.use_projection = false;
  eo.layer = encoder::untrained_representation_layer(c.encoder);
  CHECK(evaluate_pair(trainer::initial_encoder(c), test, eo).mean == report.cells[0].accuracy.mean);

  auto np = tiny_spec(Setting::kSupervised);
  np.seeds = {2};
  np.ablations.no_projection = true;
  const auto np_report = run_setting(np);
  CHECK(np_report.cells[0].key.variant == "no_projection");
  trainer::TrainConfig tc = np.train;
  tc.seed = 2;
  tc.encoder.vocab_size = sc.vocab.size();
  tc.contrast.use_projection_head = false;
  const auto train = synth::split_train_test(sc.pair_records(0, 1), s.test_size).train;
  const auto enc = trainer::train(train, tc).state.online;
  EvalOptions neo;
  neo.use_projection = false;
  CHECK(evaluate_pair(enc, test, neo).mean == np_report.cells[0].accuracy.mean);
}

TEST_CASE("sweeps") {
  QuietLogs quiet;
  auto s = tiny_spec(Setting::kSupervised);
  s.seeds = {1};
  s.sweep = Sweep{SweepAxis::kSentences, {1, 2, 4}};
  const auto report = run_sweep(s);
  CHECK(report.cells.size() == 6);
  auto cell = [&](const std::string& curve, std::size_t v) {
    for (const auto& c : report.cells)
      if (c.key.curve == curve && c.key.value == v) return c.accuracy;
    FAIL("missing cell");
    return PairAccuracy{};
  };
  CHECK(cell("a", 4).forward == cell("b", 4).forward);
  CHECK(cell("a", 4).backward == cell("b", 4).backward);
  CHECK(verify_report_means(report.to_jsonl()) == 6);

  s.sweep->curves = {"b"};
  const auto only_b = run_sweep(s);
  REQUIRE(only_b.cells.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(only_b.cells[i].key.curve == "b");
    CHECK(only_b.cells[i].accuracy.mean == report.cells[3 + i].accuracy.mean);
  }

  s.sweep = Sweep{SweepAxis::kLayer, {1, 2}};
  const auto layers = run_sweep(s);
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& c : layers.cells) seen.emplace(c.key.curve, c.key.value);
  CHECK(seen == std::set<std::pair<std::string, std::size_t>>{{"trained", 1}, {"trained", 2}, {"untrained", 1}, {"untrained", 2}});

  auto u = tiny_spec(Setting::kUnsupervised);
  u.seeds = {1};
  u.sweep = Sweep{SweepAxis::kLayer, {1, 2}};
  CHECK(run_sweep(u).cells.size() == 2);
  CHECK_THROWS_AS(run_sweep(tiny_spec(Setting::kSupervised)), SpecError);
}

TEST_CASE("cse baseline maps the source side") {
  QuietLogs quiet;
  auto s = tiny_spec(Setting::kSupervised);
  s.method = Method::kCse;
  s.seeds = {1};
  const auto report = run_setting(s);
  REQUIRE(report.cells.size() == 1);
  CHECK(report.cells[0].key.method == "cse");
  CHECK(report.cells[0].accuracy.mean >= 0.0);
  s.ablations.no_momentum = true;
  CHECK_THROWS_AS(s.validate(), SpecError);
}

TEST_CASE("report runs from corpus files") {
  QuietLogs quiet;
  synth::SyntheticOptions o;
  o.vocab_size = 80;
  o.n_pairs = 48;
  o.sentences_per_phrase = 4;
  o.phrase_word_share = 0.5;
  const auto sc = synth::generate_synthetic_languages(o);
  const auto dir = std::filesystem::temp_directory_path() / "xphrase_eval_files";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ab.tsv").string();
  corpus::save_corpus(sc.pair_records(0, 1), path);
  sc.vocab.save(corpus::sidecar_vocabulary_path(path));
  auto s = tiny_spec(Setting::kSupervised);
  s.seeds = {1};
  s.corpus_files["A-B"] = path;
  auto from_synth = tiny_spec(Setting::kSupervised);
  from_synth.seeds = {1};
  CHECK(run_setting(s).cells[0].accuracy.mean == run_setting(from_synth).cells[0].accuracy.mean);
  std::filesystem::remove_all(dir);
}

TEST_CASE("spearman with average ranks") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Reference values from scipy.stats.spearmanr.
  CHECK(spearman({1, 2, 3, 4, 5}, {5, 6, 7, 8, 7}) == doctest::Approx(0.8207826816681233).epsilon(1e-12));
  CHECK(spearman({3, 1, 2, 2, 5, 4}, {1, 1, 2, 3, 3, 4}) == doctest::Approx(0.5821543981758688).epsilon(1e-12));
  CHECK(spearman({1, 2, 3}, {7, 7, 7}) == 0.0);
  CHECK_THROWS(spearman({1, 2}, {1}));
}
