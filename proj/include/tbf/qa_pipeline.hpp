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
#include <functional>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "tbf/model_gateway.hpp"
#include "tbf/taskgraph.hpp"
#include "tbf/text.hpp"

namespace tbf {

enum class Speaker { kUser, kSystem };

inline std::string_view to_string(Speaker s) { return s == Speaker::kUser ? "user" : "system"; }

struct DialogueLine {
  Speaker speaker = Speaker::kUser;
  std::string text;

  bool operator==(const DialogueLine&) const = default;
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

inline std::size_t count_whitespace_tokens(std::string_view s) { return text::whitespace_token_count(s); }

struct ScoredStep {
  int index = 0;
  double score = 0.0;

  bool operator==(const ScoredStep&) const = default;
};

/// Dice overlap of distinct word tokens: 2|Q∩S| / (|Q| + |S|). Only a step
/// whose token set equals the question's scores 1.
inline double token_overlap(std::string_view question, std::string_view step) {
  auto q = text::word_tokens(question);
  auto s = text::word_tokens(step);
  std::set<std::string> qs(q.begin(), q.end()), ss(s.begin(), s.end());
  if (qs.empty() && ss.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : qs) common += ss.count(t);
  return 2.0 * static_cast<double>(common) / static_cast<double>(qs.size() + ss.size());
}

inline std::vector<ScoredStep> rank_steps(std::string_view question, const std::vector<StepNode>& steps) {
  if (steps.empty()) throw std::invalid_argument("rank_steps: no steps");
  std::vector<ScoredStep> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back({s.index, token_overlap(question, s.text)});
  std::stable_sort(out.begin(), out.end(), [](const ScoredStep& a, const ScoredStep& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  return out;
}

struct BudgetTooSmall : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Task context serialized as
///
///   Title:\n{title}\n\n|Description:\n {description}\n\n|Ingredients:\n
///   {one requirement per line}\n\n|Steps:\n{steps joined by ";\n"}
///
/// optionally followed by "\n\n|History:\n" and recent turns.
struct QAContext {
  std::string serialized_text;
  std::vector<int> included_step_indices;  // ascending
  std::size_t included_requirements = 0;
  std::size_t token_budget = 0;
  std::vector<DialogueLine> history_window;

  // The pieces serialized_text is built from, without separators.
  std::string head_section;         // "Title:...|Description:\n ..."
  std::string ingredients_section;  // "|Ingredients:\n..."
  std::string steps_section;        // "|Steps:\n..."
  std::string history_section;      // "|History:\n..." or empty
};

namespace detail {

inline std::string requirement_line(const Requirement& r) {
  if (r.quantity_text && !text::trim_view(*r.quantity_text).empty()) {
    return *r.quantity_text + " " + r.name;
  }
  return r.name;
}

inline std::string history_line(const DialogueLine& l) {
  return std::string(l.speaker == Speaker::kUser ? "User: " : "System: ") + l.text;
}

struct ContextParts {
  std::string head;
  std::vector<std::string> ingredient_lines;
  std::vector<std::pair<int, std::string>> steps;  // ascending by index
  std::vector<std::string> history_lines;

  std::string ingredients() const { return "|Ingredients:\n" + text::join(ingredient_lines, "\n"); }

  std::string steps_text() const {
    std::vector<std::string> parts;
    for (const auto& [_, t] : steps) parts.push_back(t);
    return "|Steps:\n" + text::join(parts, ";\n");
  }

  std::string history() const {
    if (history_lines.empty()) return {};
    return "|History:\n" + text::join(history_lines, "\n");
  }

  std::string serialize() const {
    std::string out = head + "\n\n" + ingredients() + "\n\n" + steps_text();
    if (!history_lines.empty()) out += "\n\n" + history();
    return out;
  }
};

inline std::string head_of(const Task& task) {
  return "Title:\n" + task.title + "\n\n|Description:\n " + task.description;
}

}  // namespace detail

/// Full task context with every requirement and step and no history.
inline std::string serialize_task_context(const Task& task) {
  detail::ContextParts p;
  p.head = detail::head_of(task);
  for (const auto& r : task.requirements) p.ingredient_lines.push_back(detail::requirement_line(r));
  for (const auto& s : task.steps) p.steps.emplace_back(s.index, s.text);
  return p.serialize();
}

inline constexpr std::size_t kHistoryWindow = 4;

/// Builds the QA context under `token_budget`. Title and description always
/// go in; steps are then added in rank_steps order, requirements in task
/// order, and finally the last four turns newest first, each group stopping
/// at the first item that no longer fits. Included steps are serialized in
/// task order.
inline QAContext assemble_context(const Task& task, const std::vector<DialogueLine>& history,
                                  std::string_view question, std::size_t token_budget,
                                  const TokenCounter& count = count_whitespace_tokens) {
  const std::size_t floor = count(task.title + " " + task.description) + 8;
  if (token_budget < floor) {
    throw BudgetTooSmall("token budget " + std::to_string(token_budget) + " is below the floor of " +
                         std::to_string(floor));
  }
  detail::ContextParts parts;
  parts.head = detail::head_of(task);
  if (count(parts.serialize()) > token_budget) {
    throw BudgetTooSmall("token budget " + std::to_string(token_budget) +
                         " cannot hold the title and description");
  }
  auto fits = [&] { return count(parts.serialize()) <= token_budget; };

  for (const auto& ranked : rank_steps(question, task.steps)) {
    auto pos = std::lower_bound(parts.steps.begin(), parts.steps.end(), ranked.index,
                                [](const auto& p, int idx) { return p.first < idx; });
    pos = parts.steps.insert(pos, {ranked.index, task.step(ranked.index).text});
    if (!fits()) {
      parts.steps.erase(pos);
      break;
    }
  }
  std::size_t n_reqs = 0;
  for (const auto& r : task.requirements) {
    parts.ingredient_lines.push_back(detail::requirement_line(r));
    if (!fits()) {
      parts.ingredient_lines.pop_back();
      break;
    }
    ++n_reqs;
  }
  std::vector<DialogueLine> window;
  const std::size_t start = history.size() > kHistoryWindow ? history.size() - kHistoryWindow : 0;
  for (std::size_t i = history.size(); i > start; --i) {
    const auto& line = history[i - 1];
    parts.history_lines.insert(parts.history_lines.begin(), detail::history_line(line));
    if (!fits()) {
      parts.history_lines.erase(parts.history_lines.begin());
      break;
    }
    window.insert(window.begin(), line);
  }

  QAContext ctx;
  ctx.serialized_text = parts.serialize();
  for (const auto& [idx, _] : parts.steps) ctx.included_step_indices.push_back(idx);
  ctx.included_requirements = n_reqs;
  ctx.token_budget = token_budget;
  ctx.history_window = std::move(window);
  ctx.head_section = parts.head;
  ctx.ingredients_section = parts.ingredients();
  ctx.steps_section = parts.steps_text();
  ctx.history_section = parts.history();
  return ctx;
}

enum class QuestionCategory { kFactoid, kCausal, kConfirmation, kListing, kComplex, kHistory, kNavigation };

inline std::string_view to_string(QuestionCategory c) {
  switch (c) {
    case QuestionCategory::kFactoid: return "factoid";
    case QuestionCategory::kCausal: return "causal";
    case QuestionCategory::kConfirmation: return "confirmation";
    case QuestionCategory::kListing: return "listing";
    case QuestionCategory::kComplex: return "complex";
    case QuestionCategory::kHistory: return "history";
    case QuestionCategory::kNavigation: return "navigation";
  }
  return "factoid";
}

inline std::optional<QuestionCategory> parse_category(std::string_view s) {
  for (auto c : {QuestionCategory::kFactoid, QuestionCategory::kCausal, QuestionCategory::kConfirmation,
                 QuestionCategory::kListing, QuestionCategory::kComplex, QuestionCategory::kHistory,
                 QuestionCategory::kNavigation}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

/// Keyword cascade, first match wins:
/// history -> navigation -> listing -> confirmation -> causal -> complex -> factoid.
/// Yes/no questions that offer alternatives ("... or ...") or draw an
/// inference ("does that mean") are not confirmations.
inline QuestionCategory classify_question(std::string_view question) {
  using std::regex;
  const std::string q = detail::normalize_utterance(question);

  static const regex kHistory(
      R"(^(sorry|pardon|excuse me)\b|\b(say that again|say it again|repeat that|repeat what|come again|what did you (just )?say|what was that|remind me|you (just )?said)\b|\bagain$)");
  static const regex kNavigation(
      R"(\b(what|which) step\b|\bnext\b|\bstep (after|before)\b|\bprevious step\b|\bafter (that|this)\b|\bgo back\b|\bgo to (the )?step\b|\bskip (to|ahead)\b|\bmove on\b|\bwhat now\b|\blast step\b)");
  static const regex kListing(
      R"(\bhow (much|many)\b.*\b(and|or)\b|\b(what|which) (ingredients|tools|things|items|supplies|materials)\b|\blist\b|\bwhat (else )?do i need\b)");
  static const regex kAuxLead(
      R"(^(can|could|should|would|will|is|are|do|does|did|was|were|am|may|might|shall|must|has|have|had|isn't|aren't|don't|doesn't|shouldn't|won't|wouldn't|can't)\b)");
  static const regex kAlternative(R"(\bor\b)");
  static const regex kCausal(R"(^why\b|\bwhy\b|\bhow come\b|\bwhat('?s| is) the (reason|point|purpose)\b)");
  static const regex kComplex(
      R"(\b(does|do|would|is|could) (that|this|it) mean\b|\bso that means\b|\bwhat if\b|\bwhat happens if\b|\bwhat would happen\b|\bdifference between\b|\bcompared (to|with)\b|\binstead of\b|\bbetter to\b|\bhow does .* affect\b)");

  if (std::regex_search(q, kHistory)) return QuestionCategory::kHistory;
  if (std::regex_search(q, kNavigation)) return QuestionCategory::kNavigation;
  if (std::regex_search(q, kListing)) return QuestionCategory::kListing;
  if (std::regex_search(q, kAuxLead) && !std::regex_search(q, kAlternative) &&
      !std::regex_search(q, kComplex)) {
    return QuestionCategory::kConfirmation;
  }
  if (std::regex_search(q, kCausal)) return QuestionCategory::kCausal;
  if (std::regex_search(q, kComplex)) return QuestionCategory::kComplex;
  return QuestionCategory::kFactoid;
}

struct Span {
  std::size_t start = 0;
  std::size_t length = 0;

  bool operator==(const Span&) const = default;
};

struct GroundResult {
  std::optional<Span> span;  // empty means not grounded
  bool case_folded = false;  // matched only on the case-insensitive retry

  bool grounded() const { return span.has_value(); }
};

/// First exact occurrence of `answer` in `context`; if there is none and
/// `allow_case_fold` is set, the first case-insensitive occurrence.
inline GroundResult ground_span(std::string_view answer, std::string_view context,
                                bool allow_case_fold = true) {
  if (answer.empty()) return {};
  if (auto pos = context.find(answer); pos != std::string_view::npos) {
    return {Span{pos, answer.size()}, false};
  }
  if (!allow_case_fold) return {};
  const auto lc = text::to_lower(context);
  const auto la = text::to_lower(answer);
  if (auto pos = lc.find(la); pos != std::string::npos) return {Span{pos, answer.size()}, true};
  return {};
}

enum class QAMode { kExtractive, kAbstractive };

struct QAAnswer {
  std::string text;
  bool grounded = false;
  std::optional<Span> span;
  bool case_folded = false;
  QuestionCategory category = QuestionCategory::kFactoid;
  QAContext context;
  double latency_ms = 0.0;
};

struct QATimeout {
  double latency_ms = 0.0;
};

using QAOutcome = std::variant<QAAnswer, QATimeout>;

struct QAOptions {
  const PromptLibrary* prompts = nullptr;
  const CapabilityGuard* guard = nullptr;
  int deadline_ms = 2000;
  int max_output_chars = 600;
  std::size_t token_budget = 512;
  TokenCounter count = count_whitespace_tokens;
};

namespace detail {

inline std::string clean_model_answer(std::string_view raw) {
  std::string s = text::trim(raw);
  for (std::string_view prefix : {"Answer:", "answer:", "A:"}) {
    if (text::starts_with(s, prefix)) s = text::trim(std::string_view(s).substr(prefix.size()));
  }
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    s = text::trim(std::string_view(s).substr(1, s.size() - 2));
  }
  return s;
}

}  // namespace detail

/// Prompt variables for the QA template, taken from an assembled context.
inline std::map<std::string, std::string> qa_prompt_variables(const QAContext& ctx, std::string_view question) {
  std::string steps = ctx.steps_section;
  if (!ctx.history_section.empty()) steps += "\n\n" + ctx.history_section;
  return {{"Description", ctx.head_section},
          {"Steps", steps},
          {"Ingredients", ctx.ingredients_section},
          {"Question", std::string(question)}};
}

/// One backend call. Extractive answers are span-checked against the
/// context; abstractive answers only pass through the capability guard.
/// Backend failures other than timeouts propagate as exceptions.
inline QAOutcome answer_question(const Task& task, const std::vector<DialogueLine>& history,
                                 std::string_view question, QAMode mode,
                                 const std::shared_ptr<Backend>& backend, const QAOptions& opts = {}) {
  static const PromptLibrary kDefaultPrompts;
  static const CapabilityGuard kDefaultGuard = CapabilityGuard::defaults();
  const auto& prompts = opts.prompts ? *opts.prompts : kDefaultPrompts;
  const auto& guard = opts.guard ? *opts.guard : kDefaultGuard;

  QAAnswer ans;
  ans.category = classify_question(question);
  ans.context = assemble_context(task, history, question, opts.token_budget, opts.count);

  GenerateRequest req{TemplateId::kQa, qa_prompt_variables(ans.context, question), opts.deadline_ms,
                      opts.max_output_chars};
  auto resp = generate(backend, req, prompts);
  if (resp.timed_out) return QATimeout{resp.latency_ms};
  ans.latency_ms = resp.latency_ms;

  const std::string cleaned = detail::clean_model_answer(resp.text);
  if (mode == QAMode::kAbstractive) {
    ans.text = guard_response(cleaned, guard).text;
    return ans;
  }
  if (cleaned.empty() || cleaned == "<unknown>") {
    ans.text = cleaned;
    return ans;
  }
  auto g = ground_span(cleaned, ans.context.serialized_text);
  if (g.grounded()) {
    ans.grounded = true;
    ans.span = g.span;
    ans.case_folded = g.case_folded;
    ans.text = ans.context.serialized_text.substr(g.span->start, g.span->length);
  } else {
    ans.text = cleaned;
  }
  return ans;
}

}  // namespace tbf
