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

#include <regex>

#include "xphrase/corpus.hpp"

namespace xphrase::corpus {

double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = split_tokens(candidate);
  const auto r = split_tokens(reference);
  return rouge_l<std::string>(c, r);
}

bool is_time_expression(std::string_view surface) {
  std::string s;
  s.reserve(surface.size());
  for (char ch : surface) s.push_back(ch >= 'A' && ch <= 'Z' ? static_cast<char>(ch - 'A' + 'a') : ch);
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return false;
  s = s.substr(first, s.find_last_not_of(" \t") - first + 1);

  static const std::regex numeric(R"(^[0-9]+(([\s./:,\-]|\xE2\x80\x93)+[0-9]+)*$)");
  static const std::regex decade(R"(^[0-9]{1,4}'?s$)");
  static const std::regex era(R"(^[0-9]{1,4}\s*(bc|ad|bce|ce)$)");
  static const std::regex month(
      R"(^([0-9]{1,2}\s+)?(january|february|march|april|may|june|july|august|september|october|november|december)(\s+[0-9]{1,2})?,?(\s+[0-9]{4})?$)");
  return std::regex_match(s, numeric) || std::regex_match(s, decade) || std::regex_match(s, era) ||
         std::regex_match(s, month);
}

std::vector<RawPhrasePair> filter_phrase_pairs(std::span<const RawPhrasePair> pairs) {
  std::vector<RawPhrasePair> kept;
  for (const auto& pair : pairs) {
    if (is_time_expression(pair.source) || is_time_expression(pair.target)) continue;
    const auto src = split_tokens(pair.source);
    const auto tgt = split_tokens(pair.target);
    const double forward = rouge_l<std::string>(src, tgt);
    const double backward = rouge_l<std::string>(tgt, src);
    if (forward > kRougeFilterThreshold && backward > kRougeFilterThreshold) continue;
    kept.push_back(pair);
  }
  return kept;
}

}  // namespace xphrase::corpus
