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

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "xphrase/corpus.hpp"

// One record per line, tab-separated:
//   id  src_lang  src_surface  tgt_lang  tgt_surface  src_examples  tgt_examples
// Example lists flatten (text, s, e) triples into one field joined by U+001F.

namespace xphrase::corpus {
namespace {

constexpr char kUnitSeparator = '\x1f';
constexpr std::size_t kFieldCount = 7;

void check_text(const std::string& text, const std::string& what, const std::string& record) {
  if (text.find_first_of("\t\n\r\x1f") != std::string::npos) {
    throw CorpusError("record " + record + ": " + what + " contains a tab, newline or unit separator");
  }
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::size_t parse_index(std::string_view s, std::size_t line) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw CorpusError("corpus line " + std::to_string(line) + ": bad span index '" + std::string(s) + "'");
  }
  return value;
}

void append_examples(std::string& out, const std::vector<ExampleSentence>& examples) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (i) out.push_back(kUnitSeparator);
    out += examples[i].text;
    out.push_back(kUnitSeparator);
    out += std::to_string(examples[i].span_start);
    out.push_back(kUnitSeparator);
    out += std::to_string(examples[i].span_end);
  }
}

std::vector<ExampleSentence> parse_examples(std::string_view field, const Vocabulary& vocab, std::size_t line) {
  std::vector<ExampleSentence> out;
  if (field.empty()) return out;
  const auto parts = split(field, kUnitSeparator);
  if (parts.size() % 3 != 0) {
    throw CorpusError("corpus line " + std::to_string(line) + ": example list is not a sequence of (text, s, e)");
  }
  for (std::size_t i = 0; i < parts.size(); i += 3) {
    ExampleSentence ex;
    ex.text = std::string(parts[i]);
    try {
      ex.tokens = vocab.encode(ex.text);
    } catch (const CorpusError& e) {
      throw CorpusError("corpus line " + std::to_string(line) + ": " + e.what());
    }
    ex.span_start = parse_index(parts[i + 1], line);
    ex.span_end = parse_index(parts[i + 2], line);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

std::string format_record(const PhrasePairRecord& r) {
  validate_record(r);
  check_text(r.id, "id", r.id);
  check_text(r.source.language, "source language", r.id);
  check_text(r.target.language, "target language", r.id);
  check_text(r.source.surface, "source surface", r.id);
  check_text(r.target.surface, "target surface", r.id);
  for (const auto* list : {&r.source_examples, &r.target_examples})
    for (const auto& ex : *list) check_text(ex.text, "example sentence", r.id);
  std::string line = r.id;
  for (const std::string* f : {&r.source.language, &r.source.surface, &r.target.language, &r.target.surface}) {
    line.push_back('\t');
    line += *f;
  }
  line.push_back('\t');
  append_examples(line, r.source_examples);
  line.push_back('\t');
  append_examples(line, r.target_examples);
  return line;
}

void save_corpus(std::span<const PhrasePairRecord> records, const std::string& path) {
  std::string text;
  for (const auto& r : records) {
    text += format_record(r);
    text.push_back('\n');
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write corpus '" + path + "'");
  out << text;
  if (!out) throw CorpusError("write failed for corpus '" + path + "'");
}

std::vector<PhrasePairRecord> parse_corpus(std::string_view text, const Vocabulary& vocab) {
  std::vector<PhrasePairRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto fields = split(line, '\t');
    if (fields.size() != kFieldCount) {
      throw CorpusError("corpus line " + std::to_string(line_no) + ": expected " + std::to_string(kFieldCount) +
                        " tab-separated fields, found " + std::to_string(fields.size()));
    }
    PhrasePairRecord r;
    r.id = std::string(fields[0]);
    try {
      r.source = make_phrase(source_phrase_id(r.id), std::string(fields[1]), std::string(fields[2]), vocab);
      r.target = make_phrase(target_phrase_id(r.id), std::string(fields[3]), std::string(fields[4]), vocab);
      r.source_examples = parse_examples(fields[5], vocab, line_no);
      r.target_examples = parse_examples(fields[6], vocab, line_no);
      validate_record(r);
    } catch (const CorpusError& e) {
      const std::string msg = e.what();
      if (msg.rfind("corpus line", 0) == 0) throw;
      throw CorpusError("corpus line " + std::to_string(line_no) + ": " + msg);
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<PhrasePairRecord> load_corpus(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str(), vocab);
}

std::string sidecar_vocabulary_path(const std::string& corpus_path) {
  const auto dir = std::filesystem::path(corpus_path).parent_path();
  return (dir / "vocab.txt").string();
}

}  // namespace xphrase::corpus
