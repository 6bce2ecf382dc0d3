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

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "xphrase/baselines.hpp"
#include "xphrase/corpus.hpp"
#include "xphrase/encoder.hpp"
#include "xphrase/evalharness.hpp"
#include "xphrase/keyvalue.hpp"
#include "xphrase/log.hpp"
#include "xphrase/parallel.hpp"
#include "xphrase/retrieval.hpp"
#include "xphrase/synthetic.hpp"
#include "xphrase/tensor.hpp"
#include "xphrase/trainer.hpp"

#ifndef XPHRASE_VERSION
#define XPHRASE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace xphrase;

namespace {

using Settings = std::vector<std::pair<std::string, std::string>>;

void log_resolved(const std::string& command, const Settings& settings, const std::string& extra = {}) {
  std::string text = command + ": resolved config";
  for (const auto& [k, v] : settings) text += "\n  " + k + " = " + v;
  std::istringstream lines(extra);
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) text += "\n  " + line;
  }
  log_info(text);
}

std::string version_text() {
  return std::string("xphrase ") + XPHRASE_VERSION + "\ncheckpoint format " + std::to_string(kCheckpointVersion) +
         "\nindex format " + std::to_string(retrieval::kIndexVersion) + "\nmap format " +
         std::to_string(baselines::kMapVersion);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<std::string, std::string> split_assignment(const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos) throw kv::ParseError("expected KEY=VALUE, got '" + item + "'");
  return {kv::trim(item.substr(0, eq)), kv::trim(item.substr(eq + 1))};
}

struct LoadedCorpus {
  corpus::Vocabulary vocab;
  std::vector<corpus::PhrasePairRecord> records;
};

LoadedCorpus load_corpus_file(const std::string& path, const std::string& vocab_path) {
  LoadedCorpus c;
  c.vocab = corpus::Vocabulary::load(vocab_path.empty() ? corpus::sidecar_vocabulary_path(path) : vocab_path);
  c.records = corpus::load_corpus(path, c.vocab);
  if (c.records.empty()) throw std::runtime_error("corpus " + path + " has no records");
  return c;
}

struct SideOptions {
  std::string side = "target";
  std::size_t sentences = corpus::kMaxExamples;
  std::optional<std::size_t> layer;
  bool no_projection = false;
  bool cse = false;
  bool no_examples = false;

  void add_to(CLI::App* sub, bool full) {
    sub->add_option("--side", side, "Corpus side to encode")->check(CLI::IsMember({"source", "target"}))->capture_default_str();
    sub->add_option("--sentences", sentences, "Example sentences per phrase")
        ->check(CLI::Range(std::size_t{1}, corpus::kMaxExamples))
        ->capture_default_str();
    sub->add_flag("--no-examples", no_examples, "Encode each phrase from its own tokens");
    if (!full) return;
    sub->add_option("--layer", layer, "Representation layer (default: from the encoder config)");
    sub->add_flag("--no-projection", no_projection, "Use the normalized pooled vector instead of the projection head");
    sub->add_flag("--cse", cse, "Frozen-encoder baseline: middle layer, no projection");
  }

  Settings settings() const {
    return {{"side", side},
            {"sentences", std::to_string(sentences)},
            {"layer", layer ? std::to_string(*layer) : std::string("default")},
            {"no_projection", no_projection ? "true" : "false"},
            {"cse", cse ? "true" : "false"},
            {"no_examples", no_examples ? "true" : "false"}};
  }

  // Ids and representations of one corpus side.
  std::pair<std::vector<std::string>, Tensor> encode(const encoder::PhraseEncoder& enc,
                                                     const std::vector<corpus::PhrasePairRecord>& records) const {
    const bool source = side == "source";
    std::vector<std::string> ids;
    std::vector<std::vector<corpus::ExampleSentence>> examples;
    for (const auto& r : records) {
      const auto& phrase = source ? r.source : r.target;
      ids.push_back(phrase.id);
      if (no_examples) {
        examples.push_back({encoder::bare_phrase_example(phrase)});
      } else {
        examples.push_back(source ? r.source_examples : r.target_examples);
      }
    }
    if (cse) return {ids, baselines::cse_represent(enc, examples, layer, sentences)};
    retrieval::IndexOptions io;
    io.max_sentences = sentences;
    io.use_projection = !no_projection;
    io.layer = layer;
    return {ids, retrieval::represent_all(enc, examples, io)};
  }
};

int cmd_synth(const synth::SyntheticOptions& o, const std::string& out_dir) {
  log_resolved("synth", {{"seed", std::to_string(o.seed)},
                         {"pairs", std::to_string(o.n_pairs)},
                         {"vocab_size", std::to_string(o.vocab_size)},
                         {"sentences", std::to_string(o.sentences_per_phrase)},
                         {"languages", std::to_string(o.num_languages)},
                         {"ambiguous", o.ambiguous ? "true" : "false"},
                         {"ambiguity_group", std::to_string(o.ambiguity_group)},
                         {"phrase_word_share", kv::format_double(o.phrase_word_share)},
                         {"anchor_rate", kv::format_double(o.anchor_rate)},
                         {"topic_rate", kv::format_double(o.topic_rate)},
                         {"out", out_dir}});
  const auto sc = synth::generate_synthetic_languages(o);
  fs::create_directories(out_dir);
  sc.vocab.save((fs::path(out_dir) / "vocab.txt").string());
  for (std::size_t t = 1; t < sc.languages.size(); ++t) {
    const auto name = sc.languages[0].tag + "-" + sc.languages[t].tag + ".tsv";
    corpus::save_corpus(sc.pair_records(0, t), (fs::path(out_dir) / name).string());
  }
  log_info("synth: wrote " + std::to_string(sc.languages.size() - 1) + " pair file(s) and a vocabulary of " +
           std::to_string(sc.vocab.size()) + " tokens to " + out_dir);
  return 0;
}

int cmd_corpus(const std::string& pairs_path, const std::string& src_path, const std::string& tgt_path,
               const std::string& vocab_in, std::size_t cap, const std::string& out) {
  log_resolved("corpus", {{"pairs", pairs_path},
                          {"source_sentences", src_path},
                          {"target_sentences", tgt_path},
                          {"vocab", vocab_in.empty() ? "new" : vocab_in},
                          {"cap", std::to_string(cap)},
                          {"out", out}});
  std::vector<corpus::RawPhrasePair> pairs;
  std::size_t line_no = 0;
  for (const auto& line : corpus::read_lines(pairs_path)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream in(line);
    for (std::string f; std::getline(in, f, '\t');) fields.push_back(f);
    if (fields.size() != 4) {
      throw corpus::CorpusError(pairs_path + ":" + std::to_string(line_no) +
                                ": expected 4 tab-separated fields (src_lang, src, tgt_lang, tgt)");
    }
    pairs.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  corpus::Vocabulary vocab = vocab_in.empty() ? corpus::Vocabulary() : corpus::Vocabulary::load(vocab_in);
  corpus::BuildStats stats;
  const auto records =
      corpus::build_corpus(pairs, corpus::read_lines(src_path), corpus::read_lines(tgt_path), vocab, cap, &stats);
  if (const auto dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
  corpus::save_corpus(records, out);
  vocab.save(corpus::sidecar_vocabulary_path(out));
  log_info("corpus: " + std::to_string(stats.input_pairs) + " input pairs, " + std::to_string(stats.filtered_pairs) +
           " filtered, " + std::to_string(stats.dropped_without_examples) + " without examples, " +
           std::to_string(records.size()) + " written");
  return 0;
}

int cmd_train(const std::string& corpus_path, const std::string& vocab_path, const std::string& config_path,
              const std::vector<std::string>& sets, const std::string& out_dir, const std::string& resume,
              std::optional<std::uint64_t> stop_after) {
  const auto c = load_corpus_file(corpus_path, vocab_path);
  trainer::TrainConfig config;
  if (!config_path.empty()) config.apply_text(read_text(config_path));
  for (const auto& s : sets) {
    const auto [k, v] = split_assignment(s);
    config.set(k, v);
  }
  if (config.encoder.vocab_size == 0) config.encoder.vocab_size = c.vocab.size();
  config.validate();
  log_resolved("train",
               {{"corpus", corpus_path}, {"records", std::to_string(c.records.size())}, {"out", out_dir},
                {"resume", resume.empty() ? "none" : resume},
                {"stop_after", stop_after ? std::to_string(*stop_after) : "none"}, {"threads", std::to_string(num_threads())}},
               config.to_text());
  trainer::TrainOptions opts;
  opts.out_dir = out_dir;
  opts.resume_from = resume;
  opts.stop_after_step = stop_after;
  const auto result = trainer::train(c.records, config, opts);
  if (!result.trace.empty()) {
    log_info("train: finished at step " + std::to_string(result.state.step) + ", last loss " +
             kv::format_double(result.trace.back().loss));
  }
  return 0;
}

int cmd_encode(const std::string& command, const std::string& encoder_path, const std::string& corpus_path,
               const std::string& vocab_path, const SideOptions& side, const std::string& out) {
  Settings s{{"encoder", encoder_path}, {"corpus", corpus_path}, {"out", out}};
  for (const auto& kv : side.settings()) s.push_back(kv);
  log_resolved(command, s);
  const auto enc = encoder::load_encoder(encoder_path);
  const auto c = load_corpus_file(corpus_path, vocab_path);
  if (c.vocab.size() > enc.config().vocab_size) {
    throw std::runtime_error("corpus vocabulary (" + std::to_string(c.vocab.size()) + ") is larger than the encoder's (" +
                             std::to_string(enc.config().vocab_size) + ")");
  }
  const auto [ids, rows] = side.encode(enc, c.records);
  const auto index = retrieval::index_from_rows(ids, rows, retrieval::encoder_fingerprint(enc));
  retrieval::save_index(index, out);
  log_info(command + ": wrote " + std::to_string(index.size()) + " rows of width " + std::to_string(index.dim) + " to " + out);
  return 0;
}

int cmd_query(const std::string& index_path, const std::string& encoder_path, const std::string& corpus_path,
              const std::string& vocab_path, SideOptions side, const std::string& ids_text, std::size_t k,
              const std::string& map_path, const std::string& out) {
  Settings s{{"index", index_path}, {"encoder", encoder_path}, {"corpus", corpus_path}, {"ids", ids_text.empty() ? "all" : ids_text},
             {"k", std::to_string(k)}, {"map", map_path.empty() ? "none" : map_path}, {"out", out.empty() ? "stdout" : out}};
  for (const auto& item : side.settings()) s.push_back(item);
  log_resolved("query", s);
  const auto index = retrieval::load_index(index_path);
  const auto enc = encoder::load_encoder(encoder_path);
  retrieval::check_fingerprint(index, enc);
  const auto c = load_corpus_file(corpus_path, vocab_path);
  std::vector<corpus::PhrasePairRecord> selected;
  if (ids_text.empty()) {
    selected = c.records;
  } else {
    std::stringstream in(ids_text);
    for (std::string id; std::getline(in, id, ',');) {
      id = kv::trim(id);
      const auto it = std::find_if(c.records.begin(), c.records.end(), [&](const auto& r) {
        return r.id == id || r.source.id == id || r.target.id == id;
      });
      if (it == c.records.end()) throw std::runtime_error("query: no record or phrase with id '" + id + "'");
      selected.push_back(*it);
    }
  }
  auto [qids, rows] = side.encode(enc, selected);
  if (!map_path.empty()) {
    const auto w = baselines::load_map(map_path);
    rows = Tensor::from(rows.shape(), baselines::map_index(w, retrieval::index_from_rows(qids, rows)).matrix);
  }
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw std::runtime_error("cannot write " + out);
  }
  std::ostream& os = out.empty() ? std::cout : file;
  std::size_t correct = 0, with_gold = 0;
  for (std::size_t r = 0; r < selected.size(); ++r) {
    const auto result = retrieval::query(index, std::span(rows.values().data() + r * rows.cols(), rows.cols()), k, qids[r]);
    for (std::size_t i = 0; i < result.ranked.size(); ++i) {
      char score[32];
      std::snprintf(score, sizeof score, "%.6f", result.ranked[i].score);
      os << result.query_id << '\t' << (i + 1) << '\t' << result.ranked[i].id << '\t' << score << '\n';
    }
    const auto& gold = side.side == "source" ? selected[r].target.id : selected[r].source.id;
    if (index.find(gold)) {
      ++with_gold;
      correct += result.ranked[0].id == gold;
    }
  }
  if (with_gold > 0) {
    log_info("query: accuracy@1 " + kv::format_double(static_cast<double>(correct) / static_cast<double>(with_gold)) +
             " over " + std::to_string(with_gold) + " queries with a gold translation in the index");
  }
  return 0;
}

int cmd_eval(const std::string& spec_path, const std::vector<std::string>& sets, const std::string& out) {
  std::string text = read_text(spec_path);
  for (const auto& s : sets) {
    const auto [k, v] = split_assignment(s);
    text += "\n" + k + " = " + v + "\n";
  }
  const auto spec = eval::ExperimentSpec::parse(text);
  log_resolved("eval", {{"spec", spec_path}, {"out", out.empty() ? "none" : out}, {"threads", std::to_string(num_threads())}},
               spec.to_text());
  const auto report = eval::run_experiment(spec);
  std::cout << report.table();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << report.to_jsonl();
  }
  return 0;
}

int cmd_fit_map(const std::string& source_path, const std::string& target_path, const std::string& out) {
  log_resolved("fit-map", {{"source", source_path}, {"target", target_path}, {"out", out}});
  const auto s = retrieval::load_index(source_path);
  const auto t = retrieval::load_index(target_path);
  if (s.size() != t.size() || s.dim != t.dim) {
    throw std::runtime_error("fit-map: representation files differ in shape (" + std::to_string(s.size()) + "x" +
                             std::to_string(s.dim) + " vs " + std::to_string(t.size()) + "x" + std::to_string(t.dim) + ")");
  }
  const Tensor src = Tensor::from({s.size(), s.dim}, s.matrix);
  const Tensor tgt = Tensor::from({t.size(), t.dim}, t.matrix);
  const auto w = baselines::fit_orthogonal_map(src, tgt);
  baselines::save_map(w, out);
  log_info("fit-map: residual " + kv::format_double(baselines::residual(w, src, tgt)) + " (identity " +
           kv::format_double(baselines::residual(baselines::OrthogonalMap::identity(s.dim), src, tgt)) + "), wrote " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual phrase retrieval with example sentences and contrastive training", "xphrase"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_text());
  std::size_t threads = 0;
  bool quiet = false, verbose = false;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::Range(std::size_t{0}, std::size_t{1024}));
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");
  app.add_flag("-v,--verbose", verbose, "Print debug messages");

  synth::SyntheticOptions so;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate synthetic cipher languages");
  synth->add_option("--seed", so.seed)->capture_default_str();
  synth->add_option("--pairs", so.n_pairs)->capture_default_str();
  synth->add_option("--vocab-size", so.vocab_size)->capture_default_str();
  synth->add_option("--sentences", so.sentences_per_phrase)->capture_default_str();
  synth->add_option("--languages", so.num_languages)->check(CLI::Range(2, 26))->capture_default_str();
  synth->add_flag("--ambiguous", so.ambiguous, "Groups of phrases share tokens and differ only in context");
  synth->add_option("--group", so.ambiguity_group, "Phrases per ambiguous group")->capture_default_str();
  synth->add_option("--phrase-word-share", so.phrase_word_share)->capture_default_str();
  synth->add_option("--anchor-rate", so.anchor_rate)->capture_default_str();
  synth->add_option("--topic-rate", so.topic_rate)->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string pairs_path, src_sent, tgt_sent, vocab_in, corpus_out;
  std::size_t cap = corpus::kMaxExamples;
  auto* corpus_cmd = app.add_subcommand("corpus", "Build a phrase-pair corpus with example sentences");
  corpus_cmd->add_option("--pairs", pairs_path, "TSV of src_lang, src, tgt_lang, tgt")->required()->check(CLI::ExistingFile);
  corpus_cmd->add_option("--source-sentences", src_sent, "One sentence per line")->required()->check(CLI::ExistingFile);
  corpus_cmd->add_option("--target-sentences", tgt_sent, "One sentence per line")->required()->check(CLI::ExistingFile);
  corpus_cmd->add_option("--vocab", vocab_in, "Existing vocabulary to extend")->check(CLI::ExistingFile);
  corpus_cmd->add_option("--cap", cap, "Maximum example sentences per phrase")->capture_default_str();
  corpus_cmd->add_option("--out", corpus_out, "Corpus file; the vocabulary goes next to it")->required();

  std::string corpus_path, vocab_path, config_path, train_out, resume;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> stop_after;
  auto* train = app.add_subcommand("train", "Train the phrase encoder");
  train->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  train->add_option("--vocab", vocab_path, "Vocabulary (default: next to the corpus)")->check(CLI::ExistingFile);
  train->add_option("--config", config_path, "key = value training config")->check(CLI::ExistingFile);
  train->add_option("--set", sets, "KEY=VALUE override, applied after --config");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--stop-after", stop_after, "Stop after this global step");

  std::string encoder_path, enc_out;
  SideOptions enc_side, index_side, query_side;
  query_side.side = "source";
  auto* encode = app.add_subcommand("encode", "Write phrase representations of one corpus side");
  encode->add_option("--encoder", encoder_path)->required()->check(CLI::ExistingFile);
  encode->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  encode->add_option("--vocab", vocab_path)->check(CLI::ExistingFile);
  encode->add_option("--out", enc_out)->required();
  enc_side.add_to(encode, true);

  auto* index = app.add_subcommand("index", "Build a retrieval index over one corpus side");
  index->add_option("--encoder", encoder_path)->required()->check(CLI::ExistingFile);
  index->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  index->add_option("--vocab", vocab_path)->check(CLI::ExistingFile);
  index->add_option("--out", enc_out)->required();
  index_side.add_to(index, true);

  std::string index_path, ids_text, map_path, query_out;
  std::size_t k = 5;
  auto* query = app.add_subcommand("query", "Retrieve nearest phrases for corpus phrases");
  query->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
  query->add_option("--encoder", encoder_path)->required()->check(CLI::ExistingFile);
  query->add_option("--corpus", corpus_path, "Corpus holding the query phrases")->required()->check(CLI::ExistingFile);
  query->add_option("--vocab", vocab_path)->check(CLI::ExistingFile);
  query->add_option("--ids", ids_text, "Comma-separated record or phrase ids (default: all)");
  query->add_option("-k,--k", k, "Results per query")->check(CLI::PositiveNumber)->capture_default_str();
  query->add_option("--map", map_path, "Orthogonal map applied to the queries")->check(CLI::ExistingFile);
  query->add_option("--out", query_out, "TSV output (default: stdout)");
  query_side.add_to(query, true);

  std::string spec_path, report_out;
  std::vector<std::string> eval_sets;
  auto* eval_cmd = app.add_subcommand("eval", "Run an experiment spec and write its report");
  eval_cmd->add_option("--spec", spec_path, "key = value experiment spec")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--set", eval_sets, "KEY=VALUE override of the spec");
  eval_cmd->add_option("--out", report_out, "Line-delimited JSON report");

  std::string map_source, map_target, map_out;
  auto* fit_map = app.add_subcommand("fit-map", "Fit an orthogonal map between two representation files");
  fit_map->add_option("--source", map_source)->required()->check(CLI::ExistingFile);
  fit_map->add_option("--target", map_target)->required()->check(CLI::ExistingFile);
  fit_map->add_option("--out", map_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (quiet) set_log_level(LogLevel::kWarn);
  if (verbose) set_log_level(LogLevel::kDebug);
  set_num_threads(threads);
  try {
    if (*synth) return cmd_synth(so, synth_out);
    if (*corpus_cmd) return cmd_corpus(pairs_path, src_sent, tgt_sent, vocab_in, cap, corpus_out);
    if (*train) return cmd_train(corpus_path, vocab_path, config_path, sets, train_out, resume, stop_after);
    if (*encode) return cmd_encode("encode", encoder_path, corpus_path, vocab_path, enc_side, enc_out);
    if (*index) return cmd_encode("index", encoder_path, corpus_path, vocab_path, index_side, enc_out);
    if (*query) return cmd_query(index_path, encoder_path, corpus_path, vocab_path, query_side, ids_text, k, map_path, query_out);
    if (*eval_cmd) return cmd_eval(spec_path, eval_sets, report_out);
    if (*fit_map) return cmd_fit_map(map_source, map_target, map_out);
  } catch (const kv::ParseError& e) {
    std::cerr << "xphrase: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "xphrase: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
