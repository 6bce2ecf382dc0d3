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

#include <fstream>

#include "xphrase/corpus.hpp"

namespace xphrase::corpus {
namespace {

struct CodePoint {
  char32_t value;
  std::size_t length;
};

CodePoint decode(std::string_view s, std::size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  auto cont = [&](std::size_t i) -> int {
    if (pos + i >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[pos + i]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) return {static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2), 3};
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      return {static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3), 4};
    }
  }
  return {0xFFFD, 1};
}

bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' || c == 0x00A0 || c == 0x3000;
}

bool is_unsegmented_script(char32_t c) {
  return (c >= 0x1100 && c <= 0x11FF) ||    // hangul jamo
         (c >= 0x3001 && c <= 0x303F) ||    // CJK symbols and punctuation
         (c >= 0x3040 && c <= 0x30FF) ||    // hiragana, katakana
         (c >= 0x3130 && c <= 0x318F) ||    // hangul compatibility jamo
         (c >= 0x3400 && c <= 0x4DBF) ||    // CJK extension A
         (c >= 0x4E00 && c <= 0x9FFF) ||    // CJK unified ideographs
         (c >= 0xAC00 && c <= 0xD7AF) ||    // hangul syllables
         (c >= 0xF900 && c <= 0xFAFF) ||    // CJK compatibility ideographs
         (c >= 0xFF00 && c <= 0xFFEF) ||    // halfwidth and fullwidth forms
         (c >= 0x20000 && c <= 0x2FA1F);    // CJK extensions B-F, supplement
}

}  // namespace

std::size_t utf8_length(std::string_view text) {
  std::size_t n = 0;
  for (std::size_t pos = 0; pos < text.size(); pos += decode(text, pos).length) ++n;
  return n;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t pos = 0; pos < text.size();) {
    const CodePoint cp = decode(text, pos);
    const std::string_view bytes = text.substr(pos, cp.length);
    pos += cp.length;
    if (is_space(cp.value)) {
      flush();
    } else if (is_unsegmented_script(cp.value)) {
      flush();
      tokens.emplace_back(bytes);
    } else if (cp.value < 0x80) {
      char ch = static_cast<char>(cp.value);
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
      current.push_back(ch);
    } else {
      current.append(bytes);
    }
  }
  flush();
  if (tokens.empty()) throw CorpusError("tokenize: input is empty after trimming");
  return tokens;
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> tokens) {
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

TokenId Vocabulary::add(std::string_view token) {
  const auto it = ids_.find(std::string(token));
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.contains(std::string(token)); }

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw CorpusError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  const auto tokens = split_tokens(text);
  return encode_tokens(tokens);
}

std::vector<TokenId> Vocabulary::encode_tokens(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("vocabulary: cannot write '" + path + "'");
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw CorpusError("vocabulary: write failed for '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.size() < 2 || lines[0] != "<pad>" || lines[1] != "<unk>") {
    throw CorpusError("vocabulary: '" + path + "' must start with <pad> and <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (lines[i].empty() || v.contains(lines[i])) {
      throw CorpusError("vocabulary: '" + path + "' line " + std::to_string(i + 1) + " is empty or duplicated");
    }
    v.add(lines[i]);
  }
  return v;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace xphrase::corpus
