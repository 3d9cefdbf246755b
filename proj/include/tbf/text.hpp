/*
 * Copyright 2026 The TaskBot Framework Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared by the matching, ranking and metric code.
// Everything here is ASCII-oriented; bytes >= 0x80 are treated as word
// characters so UTF-8 words are never split mid-sequence.
namespace tbf::text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_word_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

inline char lower_char(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), lower_char);
  return out;
}

inline std::string_view trim_view(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

/// Lowercased and trimmed; the key used for requirement identity.
inline std::string fold_key(std::string_view s) { return to_lower(trim_view(s)); }

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (lower_char(a[i]) != lower_char(b[i])) return false;
  }
  return true;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

/// Splits on runs of whitespace.
inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

inline std::size_t whitespace_token_count(std::string_view s) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : s) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

/// Lowercased maximal runs of word characters.
inline std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && !is_word_char(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && is_word_char(s[i])) ++i;
    if (i > start) out.push_back(to_lower(s.substr(start, i - start)));
  }
  return out;
}

/// Offset of the first case-insensitive occurrence of `phrase` in `haystack`
/// that is delimited by non-word characters (or the string ends) on both
/// sides. Returns npos when absent or when `phrase` is empty.
inline std::size_t find_whole_word(std::string_view haystack, std::string_view phrase,
                                   std::size_t from = 0) {
  if (phrase.empty() || phrase.size() > haystack.size()) return std::string_view::npos;
  const std::string h = to_lower(haystack);
  const std::string p = to_lower(phrase);
  for (std::size_t pos = h.find(p, from); pos != std::string::npos; pos = h.find(p, pos + 1)) {
    bool left_ok = pos == 0 || !is_word_char(h[pos - 1]) || !is_word_char(p.front());
    std::size_t end = pos + p.size();
    bool right_ok = end == h.size() || !is_word_char(h[end]) || !is_word_char(p.back());
    if (left_ok && right_ok) return pos;
  }
  return std::string_view::npos;
}

inline bool contains_whole_word(std::string_view haystack, std::string_view phrase) {
  return find_whole_word(haystack, phrase) != std::string_view::npos;
}

/// Truncates to at most `max_bytes` without splitting a UTF-8 sequence.
inline std::string truncate_utf8(std::string_view s, std::size_t max_bytes) {
  if (s.size() <= max_bytes) return std::string(s);
  std::size_t cut = max_bytes;
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
  return std::string(s.substr(0, cut));
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace tbf::text
