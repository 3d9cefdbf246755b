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

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "tbf/text.hpp"

// Action codes are the executable output of the decision parser:
//
//   action := name "(" [ arg ( "," arg )* ] ")"
//   name   := [a-z][a-z0-9_]*
//   arg    := string | int
//   string := '"' ( escape | any byte except '"' and '\' )* '"'
//   escape := '\"' | '\\' | '\n' | '\t' | '\r'
//   int    := [+-]? [0-9]+          (must fit in int64)
//
// Whitespace is accepted between tokens. Text after the closing paren is
// ignored when it is separated by whitespace or ';' (a generation that
// chains several actions or appends an explanation); anything glued
// directly onto the paren is an error.
namespace tbf {

enum class ArgKind { kString, kInt };

using ActionArg = std::variant<std::string, std::int64_t>;

inline ArgKind kind_of(const ActionArg& a) {
  return std::holds_alternative<std::string>(a) ? ArgKind::kString : ArgKind::kInt;
}

inline std::string_view to_string(ArgKind k) { return k == ArgKind::kString ? "str" : "int"; }

struct ActionCode {
  std::string name;
  std::vector<ActionArg> args;

  bool operator==(const ActionCode&) const = default;

  const std::string& str_arg(std::size_t i) const { return std::get<std::string>(args.at(i)); }
  std::int64_t int_arg(std::size_t i) const { return std::get<std::int64_t>(args.at(i)); }
};

inline bool is_valid_action_name(std::string_view name) {
  if (name.empty() || name.front() < 'a' || name.front() > 'z') return false;
  for (char c : name) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok) return false;
  }
  return true;
}

struct ParseError {
  std::size_t offset = 0;
  std::string reason;

  bool operator==(const ParseError&) const = default;
};

class ParseResult {
 public:
  ParseResult(ActionCode action, std::string trailing)
      : value_(std::move(action)), trailing_(std::move(trailing)) {}
  ParseResult(ParseError error) : value_(std::move(error)) {}  // NOLINT(google-explicit-constructor)

  bool ok() const { return std::holds_alternative<ActionCode>(value_); }
  explicit operator bool() const { return ok(); }

  const ActionCode& action() const { return std::get<ActionCode>(value_); }
  const ParseError& error() const { return std::get<ParseError>(value_); }

  /// Non-empty when a complete action was followed by extra text that the
  /// parser ignored. Callers log this as a warning.
  const std::string& trailing() const { return trailing_; }

 private:
  std::variant<ActionCode, ParseError> value_;
  std::string trailing_;
};

namespace detail {

class ActionParser {
 public:
  explicit ActionParser(std::string_view text) : s_(text) {}

  ParseResult run() {
    skip_ws();
    if (pos_ == s_.size()) return fail("empty input");
    ActionCode code;
    std::size_t name_start = pos_;
    while (pos_ < s_.size() && (is_name_char(s_[pos_]))) ++pos_;
    code.name = std::string(s_.substr(name_start, pos_ - name_start));
    if (code.name.empty()) return fail("expected action name");
    if (!is_valid_action_name(code.name)) {
      return ParseError{name_start, "action name must match [a-z][a-z0-9_]*"};
    }
    skip_ws();
    if (!consume('(')) return fail("expected '(' after action name");
    skip_ws();
    if (!consume(')')) {
      for (;;) {
        skip_ws();
        auto arg = parse_arg();
        if (!arg) return *error_;
        code.args.push_back(std::move(*arg));
        skip_ws();
        if (consume(',')) continue;
        if (consume(')')) break;
        if (pos_ == s_.size()) return fail("unbalanced parentheses");
        return fail("expected ',' or ')'");
      }
    }
    std::string_view rest = s_.substr(pos_);
    if (!rest.empty() && !text::is_space(rest.front()) && rest.front() != ';') {
      return fail("trailing garbage after action");
    }
    return ParseResult(std::move(code), text::trim(rest));
  }

 private:
  static bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  }

  ParseError fail(std::string reason) const { return ParseError{pos_, std::move(reason)}; }

  void skip_ws() {
    while (pos_ < s_.size() && text::is_space(s_[pos_])) ++pos_;
  }

  bool consume(char c) {
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::optional<ActionArg> parse_arg() {
    if (pos_ == s_.size()) return set_error("unbalanced parentheses");
    char c = s_[pos_];
    if (c == '"') return parse_string();
    if (c == '+' || c == '-' || (c >= '0' && c <= '9')) return parse_int();
    if (c == ')') return set_error("empty argument");
    return set_error("unquoted string argument");
  }

  std::optional<ActionArg> parse_string() {
    ++pos_;  // opening quote
    std::string out;
    while (pos_ < s_.size()) {
      char c = s_[pos_++];
      if (c == '"') return ActionArg{std::move(out)};
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (pos_ == s_.size()) break;
      char e = s_[pos_++];
      switch (e) {
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        default:
          --pos_;
          return set_error("unknown escape sequence");
      }
    }
    return set_error("unterminated string argument");
  }

  std::optional<ActionArg> parse_int() {
    std::size_t start = pos_;
    if (s_[pos_] == '+' || s_[pos_] == '-') ++pos_;
    std::size_t digits = pos_;
    while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
    if (pos_ == digits) return set_error("expected digits in integer argument");
    if (pos_ < s_.size() && is_name_char(s_[pos_])) return set_error("unquoted string argument");
    std::string_view lit = s_.substr(start, pos_ - start);
    if (lit.front() == '+') lit.remove_prefix(1);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(lit.data(), lit.data() + lit.size(), v);
    if (ec != std::errc() || ptr != lit.data() + lit.size()) {
      pos_ = start;
      return set_error("integer argument out of range");
    }
    return ActionArg{v};
  }

  std::nullopt_t set_error(std::string reason) {
    error_ = ParseError{pos_, std::move(reason)};
    return std::nullopt;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::optional<ParseError> error_;
};

}  // namespace detail

/// Parses one action code from a raw generation. Never throws.
inline ParseResult parse_action(std::string_view text) {
  return detail::ActionParser(text).run();
}

inline std::string render_arg(const ActionArg& arg) {
  if (const auto* i = std::get_if<std::int64_t>(&arg)) return std::to_string(*i);
  const auto& s = std::get<std::string>(arg);
  std::string out;
  out.reserve(s.size() + 2);
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

/// Canonical form: no whitespace, double-quoted escaped strings.
inline std::string render_action(const ActionCode& a) {
  std::string out = a.name;
  out.push_back('(');
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    if (i) out.push_back(',');
    out += render_arg(a.args[i]);
  }
  out.push_back(')');
  return out;
}

struct ActionSignature {
  std::string name;
  std::vector<ArgKind> params;

  bool operator==(const ActionSignature&) const = default;
};

inline std::string render_signature(const ActionSignature& sig) {
  std::string out = sig.name + "(";
  for (std::size_t i = 0; i < sig.params.size(); ++i) {
    if (i) out += ",";
    out += to_string(sig.params[i]);
  }
  return out + ")";
}

struct ActionSpaceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The set of executable action signatures. Immutable after construction.
class ActionSpace {
 public:
  ActionSpace() = default;

  explicit ActionSpace(std::vector<ActionSignature> signatures) {
    for (auto& sig : signatures) {
      if (!is_valid_action_name(sig.name)) {
        throw ActionSpaceError("invalid action name: '" + sig.name + "'");
      }
      if (!by_name_.emplace(sig.name, sig).second) {
        throw ActionSpaceError("duplicate action signature: " + sig.name);
      }
    }
  }

  /// The built-in space used unless a config file overrides it.
  static ActionSpace defaults() {
    using K = ArgKind;
    return ActionSpace({
        {"search", {K::kString}},
        {"select", {K::kInt}},
        {"step_select", {K::kInt}},
        {"next", {}},
        {"previous", {}},
        {"repeat", {}},
        {"answer_question", {}},
        {"replace", {K::kString}},
        {"confirm", {K::kString}},
        {"stop", {}},
        {"chit_chat", {}},
        {"fallback", {}},
    });
  }

  /// One signature per line, e.g. `search(str)` or `next()`. Blank lines
  /// and lines starting with '#' are skipped.
  static ActionSpace parse(std::istream& in) {
    std::vector<ActionSignature> sigs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto t = text::trim_view(line);
      if (t.empty() || t.front() == '#') continue;
      auto open = t.find('(');
      if (open == std::string_view::npos || t.back() != ')') {
        throw ActionSpaceError("line " + std::to_string(line_no) + ": expected name(kind,...)");
      }
      ActionSignature sig{text::trim(t.substr(0, open)), {}};
      auto inner = text::trim_view(t.substr(open + 1, t.size() - open - 2));
      while (!inner.empty()) {
        auto comma = inner.find(',');
        auto kind = text::trim_view(inner.substr(0, comma));
        if (kind == "str") {
          sig.params.push_back(ArgKind::kString);
        } else if (kind == "int") {
          sig.params.push_back(ArgKind::kInt);
        } else {
          throw ActionSpaceError("line " + std::to_string(line_no) + ": unknown kind '" +
                                 std::string(kind) + "'");
        }
        if (comma == std::string_view::npos) break;
        inner = inner.substr(comma + 1);
      }
      sigs.push_back(std::move(sig));
    }
    return ActionSpace(std::move(sigs));
  }

  static ActionSpace load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ActionSpaceError("cannot open action space file: " + path);
    return parse(in);
  }

  const ActionSignature* find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    return it == by_name_.end() ? nullptr : &it->second;
  }

  bool empty() const { return by_name_.empty(); }
  std::size_t size() const { return by_name_.size(); }

  std::vector<ActionSignature> signatures() const {
    std::vector<ActionSignature> out;
    for (const auto& [_, sig] : by_name_) out.push_back(sig);
    return out;
  }

  std::string describe() const {
    std::vector<std::string> parts;
    for (const auto& [_, sig] : by_name_) parts.push_back(render_signature(sig));
    return text::join(parts, ", ");
  }

 private:
  std::map<std::string, ActionSignature> by_name_;
};

struct InSpace {
  bool operator==(const InSpace&) const = default;
};
struct OutOfSpace {
  std::string name;
  bool operator==(const OutOfSpace&) const = default;
};
struct ArityOrTypeMismatch {
  std::string name;
  std::vector<ArgKind> expected;
  std::vector<ArgKind> got;
  bool operator==(const ArityOrTypeMismatch&) const = default;
};

using ValidationVerdict = std::variant<InSpace, OutOfSpace, ArityOrTypeMismatch>;

inline bool is_in_space(const ValidationVerdict& v) { return std::holds_alternative<InSpace>(v); }

inline ValidationVerdict validate_action(const ActionCode& a, const ActionSpace& space) {
  const ActionSignature* sig = space.find(a.name);
  if (sig == nullptr) return OutOfSpace{a.name};
  std::vector<ArgKind> got;
  got.reserve(a.args.size());
  for (const auto& arg : a.args) got.push_back(kind_of(arg));
  if (got != sig->params) return ArityOrTypeMismatch{a.name, sig->params, std::move(got)};
  return InSpace{};
}

/// Why a generation was routed to the fallback handler.
enum class FallbackReason { kParseError, kOutOfSpace, kArityOrTypeMismatch };

inline std::string_view to_string(FallbackReason r) {
  switch (r) {
    case FallbackReason::kParseError: return "parse_error";
    case FallbackReason::kOutOfSpace: return "out_of_space";
    case FallbackReason::kArityOrTypeMismatch: return "arity_or_type_mismatch";
  }
  return "unknown";
}

inline std::string describe(const ValidationVerdict& v) {
  if (std::holds_alternative<InSpace>(v)) return "in_space";
  if (const auto* o = std::get_if<OutOfSpace>(&v)) return "out_of_space: " + o->name;
  const auto& m = std::get<ArityOrTypeMismatch>(v);
  std::string exp, got;
  for (auto k : m.expected) exp += std::string(exp.empty() ? "" : ",") + std::string(to_string(k));
  for (auto k : m.got) got += std::string(got.empty() ? "" : ",") + std::string(to_string(k));
  return "arity_or_type_mismatch: " + m.name + "(" + exp + ") got (" + got + ")";
}

}  // namespace tbf
