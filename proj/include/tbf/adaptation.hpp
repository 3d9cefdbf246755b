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
#include <chrono>
#include <cstdint>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tbf/model_gateway.hpp"
#include "tbf/taskgraph.hpp"
#include "tbf/text.hpp"

// Live task adaptation in two backend stages: a replacement proposal
// ({"pairs":[{"original","replacement"}]}) and one edit per affected step
// ({"step","text"}). Nothing is applied unless every affected step was
// rewritten and validated.
namespace tbf {

struct StructuredProposal {
  std::vector<ReplacementPair> pairs;
  std::optional<std::string> rationale;

  bool operator==(const StructuredProposal&) const = default;
};

struct StepEdit {
  int step = 0;
  std::string text;

  bool operator==(const StepEdit&) const = default;
};

enum class FormatErrorKind { kInvalidSyntax, kMissingField, kWrongKind, kExtraField, kConstraint };

inline std::string_view to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::kInvalidSyntax: return "invalid_syntax";
    case FormatErrorKind::kMissingField: return "missing_field";
    case FormatErrorKind::kWrongKind: return "wrong_kind";
    case FormatErrorKind::kExtraField: return "extra_field";
    case FormatErrorKind::kConstraint: return "constraint";
  }
  return "invalid_syntax";
}

struct FormatError {
  FormatErrorKind kind = FormatErrorKind::kInvalidSyntax;
  std::string reason;
};

inline nlohmann::json to_json(const StructuredProposal& p) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& pr : p.pairs) pairs.push_back({{"original", pr.original}, {"replacement", pr.replacement}});
  nlohmann::json j = {{"pairs", std::move(pairs)}};
  if (p.rationale) j["rationale"] = *p.rationale;
  return j;
}

inline std::string serialize(const StructuredProposal& p) { return to_json(p).dump(); }
inline std::string serialize(const StepEdit& e) {
  return nlohmann::json{{"step", e.step}, {"text", e.text}}.dump();
}

namespace detail {

/// Finds the first balanced {...} block that parses as a JSON object,
/// skipping any prose around it.
inline std::variant<nlohmann::json, FormatError> extract_json_object(std::string_view text) {
  for (std::size_t open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        auto j = nlohmann::json::parse(text.substr(open, i - open + 1), nullptr, false);
        if (!j.is_discarded() && j.is_object()) return j;
        break;
      }
    }
  }
  return FormatError{FormatErrorKind::kInvalidSyntax, "no JSON object found"};
}

inline std::optional<FormatError> check_keys(const nlohmann::json& obj, const std::set<std::string>& required,
                                             const std::set<std::string>& optional_keys,
                                             const std::string& where) {
  for (const auto& k : required) {
    if (!obj.contains(k)) return FormatError{FormatErrorKind::kMissingField, where + "missing \"" + k + "\""};
  }
  for (const auto& [k, _] : obj.items()) {
    if (!required.count(k) && !optional_keys.count(k)) {
      return FormatError{FormatErrorKind::kExtraField, where + "unexpected field \"" + k + "\""};
    }
  }
  return std::nullopt;
}

}  // namespace detail

using ProposalParse = std::variant<StructuredProposal, FormatError>;
using StepEditParse = std::variant<StepEdit, FormatError>;

inline ProposalParse parse_proposal(std::string_view text) {
  auto extracted = detail::extract_json_object(text);
  if (auto* e = std::get_if<FormatError>(&extracted)) return *e;
  const auto& j = std::get<nlohmann::json>(extracted);
  if (auto e = detail::check_keys(j, {"pairs"}, {"rationale"}, "")) return *e;
  const auto& pairs = j.at("pairs");
  if (!pairs.is_array()) return FormatError{FormatErrorKind::kWrongKind, "\"pairs\" must be an array"};
  if (pairs.empty()) return FormatError{FormatErrorKind::kConstraint, "\"pairs\" must not be empty"};

  StructuredProposal p;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string where = "pairs[" + std::to_string(i) + "]: ";
    const auto& item = pairs[i];
    if (!item.is_object()) return FormatError{FormatErrorKind::kWrongKind, where + "expected object"};
    if (auto e = detail::check_keys(item, {"original", "replacement"}, {}, where)) return *e;
    if (!item["original"].is_string() || !item["replacement"].is_string()) {
      return FormatError{FormatErrorKind::kWrongKind, where + "original and replacement must be strings"};
    }
    ReplacementPair pr{text::trim(item["original"].get<std::string>()),
                       text::trim(item["replacement"].get<std::string>())};
    if (pr.original.empty() || pr.replacement.empty()) {
      return FormatError{FormatErrorKind::kConstraint, where + "empty original or replacement"};
    }
    if (!seen.insert(text::fold_key(pr.original)).second) {
      return FormatError{FormatErrorKind::kConstraint, where + "duplicate original \"" + pr.original + "\""};
    }
    p.pairs.push_back(std::move(pr));
  }
  if (j.contains("rationale")) {
    if (!j["rationale"].is_string()) return FormatError{FormatErrorKind::kWrongKind, "\"rationale\" must be a string"};
    p.rationale = j["rationale"].get<std::string>();
  }
  return p;
}

inline StepEditParse parse_step_edit(std::string_view text) {
  auto extracted = detail::extract_json_object(text);
  if (auto* e = std::get_if<FormatError>(&extracted)) return *e;
  const auto& j = std::get<nlohmann::json>(extracted);
  if (auto e = detail::check_keys(j, {"step", "text"}, {}, "")) return *e;
  if (!j["step"].is_number_integer()) return FormatError{FormatErrorKind::kWrongKind, "\"step\" must be an integer"};
  if (!j["text"].is_string()) return FormatError{FormatErrorKind::kWrongKind, "\"text\" must be a string"};
  const auto step = j["step"].is_number_unsigned() ? static_cast<std::int64_t>(std::min<std::uint64_t>(
                                                        j["step"].get<std::uint64_t>(), std::numeric_limits<std::int64_t>::max()))
                                                  : j["step"].get<std::int64_t>();
  if (step < 1 || step > std::numeric_limits<int>::max()) {
    return FormatError{FormatErrorKind::kConstraint, "\"step\" out of range"};
  }
  StepEdit e{j["step"].get<int>(), text::trim(j["text"].get<std::string>())};
  if (e.text.empty()) return FormatError{FormatErrorKind::kConstraint, "\"text\" must not be empty"};
  return e;
}

enum class StructuredSchema { kProposal, kRewrite };

inline std::variant<StructuredProposal, StepEdit, FormatError> parse_structured(std::string_view text,
                                                                                StructuredSchema schema) {
  if (schema == StructuredSchema::kProposal) {
    auto r = parse_proposal(text);
    if (auto* p = std::get_if<StructuredProposal>(&r)) return *p;
    return std::get<FormatError>(r);
  }
  auto r = parse_step_edit(text);
  if (auto* e = std::get_if<StepEdit>(&r)) return *e;
  return std::get<FormatError>(r);
}

enum class FailureKind { kFormat, kUnknownRequirement, kInvalidMapping, kTimeout, kUnavailable, kRewrite, kResidualTerm };

inline std::string_view to_string(FailureKind k) {
  switch (k) {
    case FailureKind::kFormat: return "format";
    case FailureKind::kUnknownRequirement: return "unknown_requirement";
    case FailureKind::kInvalidMapping: return "invalid_mapping";
    case FailureKind::kTimeout: return "timeout";
    case FailureKind::kUnavailable: return "unavailable";
    case FailureKind::kRewrite: return "rewrite";
    case FailureKind::kResidualTerm: return "residual_term";
  }
  return "format";
}

struct AdaptationFailure {
  FailureKind kind = FailureKind::kFormat;
  std::string detail;
};

struct AdaptationOptions {
  const PromptLibrary* prompts = nullptr;
  int call_deadline_ms = 2000;
  int max_output_chars = 2000;
  /// Absolute cut-off shared by every call in the operation.
  std::optional<std::chrono::steady_clock::time_point> overall_deadline;
  bool concurrent_rewrites = false;
};

namespace detail {

inline const PromptLibrary& prompts_or_default(const AdaptationOptions& o) {
  static const PromptLibrary kDefault;
  return o.prompts ? *o.prompts : kDefault;
}

/// Remaining per-call budget in ms, or 0 when the overall deadline passed.
inline int call_budget(const AdaptationOptions& o) {
  if (!o.overall_deadline) return o.call_deadline_ms;
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*o.overall_deadline -
                                                                    std::chrono::steady_clock::now())
                  .count();
  return static_cast<int>(std::clamp<long long>(left, 0, o.call_deadline_ms));
}

struct CallOutcome {
  std::optional<std::string> text;
  std::optional<FailureKind> failure;
  std::string detail;
};

inline CallOutcome call_backend(const std::shared_ptr<Backend>& backend, TemplateId id,
                                std::map<std::string, std::string> vars, const AdaptationOptions& o) {
  int budget = call_budget(o);
  if (budget <= 0) return {std::nullopt, FailureKind::kTimeout, "no time left in budget"};
  try {
    auto resp = generate(backend, {id, std::move(vars), budget, o.max_output_chars}, prompts_or_default(o));
    if (resp.timed_out) return {std::nullopt, FailureKind::kTimeout, "backend timed out"};
    return {std::move(resp.text), std::nullopt, {}};
  } catch (const std::exception& e) {
    return {std::nullopt, FailureKind::kUnavailable, e.what()};
  }
}

inline std::string requirement_list(const Task& task) {
  std::vector<std::string> lines;
  for (const auto& r : task.requirements) lines.push_back("- " + r.name);
  return text::join(lines, "\n");
}

}  // namespace detail

/// Stage one. At most two backend calls: the second only after a format
/// error. The returned proposal names originals as the task spells them.
inline std::variant<StructuredProposal, AdaptationFailure> propose_replacement(
    const Task& task, std::string_view request, const std::shared_ptr<Backend>& backend,
    const AdaptationOptions& opts = {}) {
  if (text::trim_view(request).empty()) return AdaptationFailure{FailureKind::kFormat, "empty request"};
  std::map<std::string, std::string> vars = {{"title", task.title},
                                             {"requirements", detail::requirement_list(task)},
                                             {"request", std::string(request)}};
  FormatError last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto out = detail::call_backend(backend, TemplateId::kReplacementProposal, vars, opts);
    if (out.failure) return AdaptationFailure{*out.failure, out.detail};
    auto parsed = parse_proposal(*out.text);
    if (auto* err = std::get_if<FormatError>(&parsed)) {
      last = *err;
      continue;
    }
    auto proposal = std::get<StructuredProposal>(std::move(parsed));
    try {
      auto mapping = build_mapping(task, proposal.pairs);
      apply_replacement(task, mapping, {});  // dry run validates the names
      proposal.pairs = mapping.pairs;
      return proposal;
    } catch (const UnknownRequirement& e) {
      return AdaptationFailure{FailureKind::kUnknownRequirement, e.what()};
    } catch (const std::exception& e) {
      return AdaptationFailure{FailureKind::kInvalidMapping, e.what()};
    }
  }
  return AdaptationFailure{FailureKind::kFormat, std::string(to_string(last.kind)) + ": " + last.reason};
}

struct StepOutcome {
  std::optional<std::string> text;  // set on success
  std::string failure;              // set on failure
  int attempts = 0;

  bool ok() const { return text.has_value(); }
};

struct RewriteResult {
  ReplacementMapping mapping;
  std::map<int, StepOutcome> steps;  // one entry per affected step
  std::vector<bool> applied;         // parallel to mapping.pairs

  bool complete() const {
    return std::all_of(steps.begin(), steps.end(), [](const auto& kv) { return kv.second.ok(); });
  }

  std::map<int, std::string> rewritten() const {
    std::map<int, std::string> out;
    for (const auto& [i, s] : steps) {
      if (s.ok()) out[i] = *s.text;
    }
    return out;
  }
};

/// Checks an edit for one step: it must name every replacement that applies
/// to the step and must not mention any original of the proposal.
inline std::optional<std::string> validate_step_edit(const StepEdit& edit, int expected_step,
                                                     const std::vector<ReplacementPair>& step_pairs,
                                                     const std::vector<ReplacementPair>& all_pairs) {
  if (edit.step != expected_step) {
    return "edit targets step " + std::to_string(edit.step) + ", expected " + std::to_string(expected_step);
  }
  for (const auto& p : step_pairs) {
    if (!text::contains_whole_word(edit.text, p.replacement)) return "missing replacement \"" + p.replacement + "\"";
  }
  for (const auto& p : all_pairs) {
    if (text::contains_whole_word(edit.text, p.original)) return "still mentions \"" + p.original + "\"";
  }
  return std::nullopt;
}

/// Stage two. One edit call per affected step, retried once after a format
/// or validation failure. A failed step keeps its original text.
inline RewriteResult rewrite_steps(const Task& task, const StructuredProposal& proposal,
                                   const std::shared_ptr<Backend>& backend, const AdaptationOptions& opts = {}) {
  RewriteResult result;
  result.mapping = build_mapping(task, proposal.pairs);
  const auto& m = result.mapping;

  auto edit_one = [&](int index) {
    std::vector<ReplacementPair> step_pairs;
    std::vector<std::string> described;
    for (std::size_t k = 0; k < m.pairs.size(); ++k) {
      const auto& aff = m.affected_steps[k];
      if (std::find(aff.begin(), aff.end(), index) != aff.end()) {
        step_pairs.push_back(m.pairs[k]);
        described.push_back(m.pairs[k].original + " -> " + m.pairs[k].replacement);
      }
    }
    std::map<std::string, std::string> vars = {{"title", task.title},
                                               {"replacements", text::join(described, "; ")},
                                               {"step_index", std::to_string(index)},
                                               {"step_text", task.step(index).text}};
    StepOutcome outcome;
    for (int attempt = 0; attempt < 2; ++attempt) {
      ++outcome.attempts;
      auto out = detail::call_backend(backend, TemplateId::kTaskRewrite, vars, opts);
      if (out.failure) {
        outcome.failure = std::string(to_string(*out.failure)) + ": " + out.detail;
        break;
      }
      auto parsed = parse_step_edit(*out.text);
      if (auto* err = std::get_if<FormatError>(&parsed)) {
        outcome.failure = "format: " + err->reason;
        continue;
      }
      const auto& edit = std::get<StepEdit>(parsed);
      if (auto why = validate_step_edit(edit, index, step_pairs, m.pairs)) {
        outcome.failure = "validation: " + *why;
        continue;
      }
      outcome.text = edit.text;
      outcome.failure.clear();
      break;
    }
    return outcome;
  };

  const auto affected = m.all_affected();
  if (opts.concurrent_rewrites && affected.size() > 1) {
    std::vector<std::pair<int, std::future<StepOutcome>>> pending;
    for (int i : affected) pending.emplace_back(i, std::async(std::launch::async, edit_one, i));
    for (auto& [i, f] : pending) result.steps[i] = f.get();
  } else {
    for (int i : affected) result.steps[i] = edit_one(i);
  }

  for (std::size_t k = 0; k < m.pairs.size(); ++k) {
    bool ok = std::all_of(m.affected_steps[k].begin(), m.affected_steps[k].end(),
                          [&](int i) { return result.steps.at(i).ok(); });
    result.applied.push_back(ok);
  }
  return result;
}

struct AdaptationSuccess {
  Task task;
  std::string summary;
  StructuredProposal proposal;
  RewriteResult rewrites;
};

inline std::string describe_pairs(const std::vector<ReplacementPair>& pairs) {
  std::vector<std::string> parts;
  for (const auto& p : pairs) parts.push_back(p.original + " with " + p.replacement);
  if (parts.size() <= 1) return text::join(parts, "");
  auto last = parts.back();
  parts.pop_back();
  return text::join(parts, ", ") + " and " + last;
}

/// All-or-nothing application of a finished rewrite. Succeeds only when
/// every affected step was rewritten and no original term is left in the
/// steps or requirements.
inline std::variant<Task, AdaptationFailure> apply_rewrites(const Task& task, const RewriteResult& rewrites) {
  if (!rewrites.complete()) {
    std::vector<std::string> failed;
    for (const auto& [i, s] : rewrites.steps) {
      if (!s.ok()) failed.push_back("step " + std::to_string(i) + " (" + s.failure + ")");
    }
    return AdaptationFailure{FailureKind::kRewrite, "failed edits: " + text::join(failed, ", ")};
  }
  Task out;
  try {
    out = apply_replacement(task, rewrites.mapping, rewrites.rewritten());
  } catch (const std::exception& e) {
    return AdaptationFailure{FailureKind::kInvalidMapping, e.what()};
  }
  for (const auto& p : rewrites.mapping.pairs) {
    for (const auto& s : out.steps) {
      if (text::contains_whole_word(s.text, p.original)) {
        return AdaptationFailure{FailureKind::kResidualTerm, "step " + std::to_string(s.index) + " still mentions " + p.original};
      }
    }
    for (const auto& r : out.requirements) {
      if (text::contains_whole_word(r.name, p.original)) {
        return AdaptationFailure{FailureKind::kResidualTerm, "requirement \"" + r.name + "\" still mentions " + p.original};
      }
    }
  }
  return out;
}

inline std::string success_summary(const RewriteResult& r) {
  auto n = r.steps.size();
  std::string s = "I've replaced " + describe_pairs(r.mapping.pairs);
  if (n == 0) return s + ".";
  return s + " and updated " + std::to_string(n) + (n == 1 ? " step." : " steps.");
}

/// Both stages back to back with the confirmation taken as given. On any
/// failure the caller keeps its original task.
inline std::variant<AdaptationSuccess, AdaptationFailure> adapt(const Task& task, std::string_view request,
                                                                const std::shared_ptr<Backend>& backend,
                                                                const AdaptationOptions& opts = {}) {
  auto proposed = propose_replacement(task, request, backend, opts);
  if (auto* f = std::get_if<AdaptationFailure>(&proposed)) return *f;
  auto proposal = std::get<StructuredProposal>(std::move(proposed));
  auto rewrites = rewrite_steps(task, proposal, backend, opts);
  auto applied = apply_rewrites(task, rewrites);
  if (auto* f = std::get_if<AdaptationFailure>(&applied)) return *f;
  AdaptationSuccess ok{std::get<Task>(std::move(applied)), success_summary(rewrites), std::move(proposal),
                       std::move(rewrites)};
  return ok;
}

}  // namespace tbf
