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

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tbf/action_dsl.hpp"
#include "tbf/prompts.hpp"
#include "tbf/taskgraph.hpp"
#include "tbf/text.hpp"

namespace tbf {

enum class Phase { kExploration, kExecution };

inline std::string_view to_string(Phase p) {
  return p == Phase::kExploration ? "exploration" : "execution";
}

struct GenerateRequest {
  TemplateId template_id = TemplateId::kFallback;
  std::map<std::string, std::string> variables;
  int deadline_ms = 2000;
  int max_output_chars = 1000;
};

/// On timeout `text` is empty; the caller substitutes its default response.
struct GenerateResponse {
  std::string text;
  double latency_ms = 0.0;
  bool timed_out = false;
  std::string backend_id;
};

/// What a backend receives for one call.
struct CompletionCall {
  TemplateId template_id = TemplateId::kFallback;
  std::map<std::string, std::string> variables;
  std::string prompt;
  int max_output_chars = 1000;
  std::chrono::milliseconds timeout{2000};
};

struct BackendUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ScriptExhausted : std::runtime_error {
  ScriptExhausted() : std::runtime_error("scripted backend has no outputs left") {}
};

/// A text generator. Implementations must tolerate concurrent calls and
/// should return promptly once `stop` is requested.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const CompletionCall& call, std::stop_token stop) = 0;
};

/// Replays canned outputs in call order, each after an optional delay.
class ScriptedBackend final : public Backend {
 public:
  struct Reply {
    std::string text;
    std::chrono::milliseconds delay{0};
    bool unavailable = false;  // simulate a connection failure
  };

  explicit ScriptedBackend(std::vector<Reply> replies, std::string name = "scripted")
      : replies_(replies.begin(), replies.end()), name_(std::move(name)) {}

  static std::shared_ptr<ScriptedBackend> of(std::vector<std::string> texts) {
    std::vector<Reply> replies;
    for (auto& t : texts) replies.push_back({std::move(t), {}, false});
    return std::make_shared<ScriptedBackend>(std::move(replies));
  }

  /// JSON lines: {"text": str, "delay_ms": int?, "unavailable": bool?}.
  static std::shared_ptr<ScriptedBackend> load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open script file: " + path);
    std::vector<Reply> replies;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (text::trim_view(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        replies.push_back({j.at("text").get<std::string>(),
                           std::chrono::milliseconds(j.value("delay_ms", 0)),
                           j.value("unavailable", false)});
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    return std::make_shared<ScriptedBackend>(std::move(replies), "scripted:" + path);
  }

  std::string id() const override { return name_; }

  std::string complete(const CompletionCall& /*call*/, std::stop_token stop) override {
    Reply r;
    {
      std::lock_guard lock(mu_);
      if (replies_.empty()) throw ScriptExhausted();
      r = std::move(replies_.front());
      replies_.pop_front();
      ++calls_;
    }
    if (r.delay.count() > 0) {
      std::mutex m;
      std::condition_variable_any cv;
      std::unique_lock lock(m);
      cv.wait_for(lock, stop, r.delay, [] { return false; });
      if (stop.stop_requested()) return {};
    }
    if (r.unavailable) throw BackendUnavailable("scripted connection failure");
    return r.text;
  }

  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return replies_.size();
  }
  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  mutable std::mutex mu_;
  std::deque<Reply> replies_;
  std::size_t calls_ = 0;
  std::string name_;
};

/// Runs the backend on a worker and abandons it at the deadline. The worker
/// is asked to stop and left to finish on its own; its result is dropped.
inline GenerateResponse generate(const std::shared_ptr<Backend>& backend,
                                 const GenerateRequest& request,
                                 const PromptLibrary& prompts = PromptLibrary()) {
  if (!backend) throw BackendUnavailable("no backend configured");
  if (request.deadline_ms <= 0) throw std::invalid_argument("deadline_ms must be positive");
  if (request.max_output_chars <= 0) throw std::invalid_argument("max_output_chars must be positive");

  CompletionCall call{request.template_id, request.variables,
                      prompts.render(request.template_id, request.variables),
                      request.max_output_chars, std::chrono::milliseconds(request.deadline_ms)};

  struct CallState {
    std::mutex mu;
    std::condition_variable cv;
    bool done = false;
    std::string text;
    std::exception_ptr error;
    std::stop_source stop;
  };
  auto state = std::make_shared<CallState>();
  const auto start = std::chrono::steady_clock::now();
  const auto deadline = start + std::chrono::milliseconds(request.deadline_ms);

  std::thread([backend, state, call = std::move(call)] {
    std::string out;
    std::exception_ptr err;
    try {
      out = backend->complete(call, state->stop.get_token());
    } catch (...) {
      err = std::current_exception();
    }
    std::lock_guard lock(state->mu);
    state->text = std::move(out);
    state->error = err;
    state->done = true;
    state->cv.notify_all();
  }).detach();

  GenerateResponse resp;
  resp.backend_id = backend->id();
  std::unique_lock lock(state->mu);
  bool finished = state->cv.wait_until(lock, deadline, [&] { return state->done; });
  resp.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (!finished) {
    state->stop.request_stop();
    resp.timed_out = true;
    return resp;
  }
  if (state->error) std::rethrow_exception(state->error);
  resp.text = text::truncate_utf8(state->text, static_cast<std::size_t>(request.max_output_chars));
  return resp;
}

// ---------------------------------------------------------------------------
// Rule-based decision parser

namespace detail {

inline std::string normalize_utterance(std::string_view utterance) {
  std::string s;
  s.reserve(utterance.size());
  for (std::size_t i = 0; i < utterance.size(); ++i) {
    // U+2019 RIGHT SINGLE QUOTATION MARK -> '
    if (i + 2 < utterance.size() && static_cast<unsigned char>(utterance[i]) == 0xE2 &&
        static_cast<unsigned char>(utterance[i + 1]) == 0x80 &&
        static_cast<unsigned char>(utterance[i + 2]) == 0x99) {
      s.push_back('\'');
      i += 2;
      continue;
    }
    s.push_back(text::lower_char(utterance[i]));
  }
  auto t = std::string(text::trim_view(s));
  while (!t.empty() && (t.back() == '?' || t.back() == '!' || t.back() == '.' || t.back() == ',')) {
    t.pop_back();
  }
  // collapse internal whitespace
  std::string out;
  bool space = false;
  for (char c : t) {
    if (text::is_space(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

inline std::optional<int> number_word(std::string_view w) {
  static const std::map<std::string, int, std::less<>> kWords = {
      {"one", 1},   {"two", 2},    {"three", 3},  {"four", 4},   {"five", 5},  {"six", 6},
      {"seven", 7}, {"eight", 8},  {"nine", 9},   {"ten", 10},   {"first", 1}, {"second", 2},
      {"third", 3}, {"fourth", 4}, {"fifth", 5},  {"sixth", 6},  {"seventh", 7}, {"eighth", 8},
      {"ninth", 9}, {"tenth", 10}, {"1st", 1},    {"2nd", 2},    {"3rd", 3}};
  if (auto it = kWords.find(w); it != kWords.end()) return it->second;
  if (w.empty() || w.size() > 6) return std::nullopt;
  int v = 0;
  for (char c : w) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return v;
}

inline std::string clean_argument(std::string s) {
  static const std::regex kTail(R"((\s+(please|thanks|thank you|now))+$)");
  static const std::regex kHead(R"(^(the|some|any|a|an)\s+)");
  s = std::regex_replace(s, kTail, "");
  s = std::regex_replace(s, kHead, "");
  return text::trim(s);
}

inline std::string action_text(std::string name, std::vector<ActionArg> args = {}) {
  return render_action(ActionCode{std::move(name), std::move(args)});
}

}  // namespace detail

/// Deterministic stand-in for a trained decision parser. Patterns are tried
/// top to bottom against the lowercased utterance with trailing punctuation
/// removed:
///
///   both phases  stop / exit / quit / bye ........... stop()
///                yes / sure / ok / go ahead ......... confirm("yes")
///                no / nope / no thanks .............. confirm("no")
///                i don't have X / i'm out of X /
///                replace X / can i use Y instead of X  replace("X")
///                search for X / find X / look for X . search("X")
///   execution    [go to] step N ..................... step_select(N)
///                ... step after / following step .... step_select(cur+1)
///                ... step before .................... step_select(cur-1)
///                next / continue / what's next ...... next()
///                previous / go back ................. previous()
///                repeat / say that again ............ repeat()
///                question word or trailing '?' ...... answer_question()
///                anything else ...................... fallback()
///   exploration [select] [option] N / the first one  select(N)
///                do you have X / i want to make X /
///                how do i make X / show me X ........ search("X")
///                anything else ...................... chit_chat()
inline std::string rule_ndp(Phase phase, std::optional<int> current_step, std::string_view utterance) {
  using std::regex;
  const std::string u = detail::normalize_utterance(utterance);
  const bool has_qmark = text::trim_view(utterance).ends_with('?');
  std::smatch m;

  static const regex kStop(
      R"(^(stop|exit|quit|goodbye|bye|good bye|i'?m done|that'?s all|end the conversation)( please| now)?$)");
  static const regex kYes(
      R"(^(yes|yeah|yep|yup|sure|ok|okay|please do|do it|go ahead|sounds good|absolutely|sure thing)( please| thanks| thank you| do it)?$)");
  static const regex kNo(R"(^(no|nope|nah|no thanks|no thank you|never mind|keep it|keep the original)$)");
  static const regex kDontHave(R"(^(?:but )?(?:i )?(?:don'?t|do not) have (?:any )?(.+)$)");
  static const regex kOutOf(R"(^(?:i'?m|i am|we'?re|we are) (?:all )?out of (.+)$)");
  static const regex kUseInstead(R"(^(?:can|could|may) i use (.+?) instead of (.+)$)");
  static const regex kInsteadOf(R"(^what can i use instead of (.+)$)");
  static const regex kReplace(
      R"(^(?:can you |could you |can i |could i |please |i want to |i'?d like to )?(?:replace|substitute|swap out|swap) (.+?)(?: with .+| for .+)?$)");
  static const regex kSearchExplicit(R"(^(?:search for|search|find me|find|look for|looking for)\s+(.+)$)");

  if (std::regex_match(u, kStop)) return detail::action_text("stop");
  if (std::regex_match(u, kYes)) return detail::action_text("confirm", {std::string("yes")});
  if (std::regex_match(u, kNo)) return detail::action_text("confirm", {std::string("no")});
  if (std::regex_match(u, m, kUseInstead)) {
    return detail::action_text("replace", {detail::clean_argument(m[2].str())});
  }
  if (std::regex_match(u, m, kInsteadOf) || std::regex_match(u, m, kDontHave) ||
      std::regex_match(u, m, kOutOf) || std::regex_match(u, m, kReplace)) {
    return detail::action_text("replace", {detail::clean_argument(m[1].str())});
  }
  if (std::regex_match(u, m, kSearchExplicit)) {
    return detail::action_text("search", {detail::clean_argument(m[1].str())});
  }

  if (phase == Phase::kExecution) {
    static const regex kGoto(
        R"(^(?:(?:can you |please )?(?:go|skip|jump|take me|move) (?:back |ahead )?to |show me |read )?(?:the )?step (?:number )?(\w+)(?: please)?$)");
    static const regex kStepAfter(R"(\b(step after|following step|step after this|next step after)\b)");
    static const regex kStepBefore(R"(\b(step before|preceding step)\b)");
    static const regex kNext(
        R"(^(?:ok |okay |alright |great |done |good )?(?:go to the )?(next|next step|next one|continue|move on|go on|keep going|what'?s next|what is next|what comes next|what step comes next|go forward|i'?m ready|ready|done|finished)(?: please)?$)");
    static const regex kPrevious(
        R"(^(?:ok |okay )?(?:go to the )?(previous|previous step|previous one|go back|back|step back|last step|go back a step|go back one step)(?: please)?$)");
    static const regex kRepeat(
        R"(^(?:can you |could you |please )?(repeat|repeat that|repeat the step|repeat this step|say that again|say it again|again|come again|what was that|pardon)(?: please)?$)");
    static const regex kQuestion(
        R"(^(what|what's|whats|how|why|when|where|which|who|whose|can|could|should|do|does|did|is|are|will|would|was|were|am|may|might|shall|must|have|has|had|isn't|aren't|don't|doesn't|shouldn't|won't)\b)");

    if (std::regex_match(u, m, kGoto)) {
      if (auto n = detail::number_word(m[1].str())) {
        return detail::action_text("step_select", {static_cast<std::int64_t>(*n)});
      }
    }
    if (std::regex_search(u, kStepAfter)) {
      if (current_step) return detail::action_text("step_select", {std::int64_t{*current_step + 1}});
      return detail::action_text("next");
    }
    if (std::regex_search(u, kStepBefore)) {
      if (current_step && *current_step > 1) {
        return detail::action_text("step_select", {std::int64_t{*current_step - 1}});
      }
      return detail::action_text("previous");
    }
    if (std::regex_match(u, kNext)) return detail::action_text("next");
    if (std::regex_match(u, kPrevious)) return detail::action_text("previous");
    if (std::regex_match(u, kRepeat)) return detail::action_text("repeat");
    if (has_qmark || std::regex_search(u, kQuestion)) return detail::action_text("answer_question");
    return detail::action_text("fallback");
  }

  static const regex kSelect(
      R"(^(?:i'?ll take |i want |let'?s do |let'?s go with |go with |select |choose |pick |open |start )?(?:the )?(?:option |number |recipe |task |result )?(\w+)(?: one| option| recipe| result)?(?: please)?$)");
  static const regex kSearch(
      R"(^(?:(?:do|can) you have|have you got|can you find(?: me)?|could you find(?: me)?|show me|i want to (?:make|cook|bake|build|fix|learn|do)|i'?d like to (?:make|cook|bake|build|fix|do)|i would like to (?:make|cook|bake|build|fix|do)|how do i (?:make|cook|bake|build|fix)|how to (?:make|cook|bake|build|fix)|help me (?:make|cook|bake|build|fix)|let'?s (?:make|cook|bake|build)|i want|i'?m looking for|give me|suggest|recommend|new)\s+(.+)$)");

  if (std::regex_match(u, m, kSelect)) {
    if (auto n = detail::number_word(m[1].str()); n && *n >= 1) {
      return detail::action_text("select", {static_cast<std::int64_t>(*n)});
    }
  }
  if (std::regex_match(u, m, kSearch)) {
    auto q = detail::clean_argument(m[1].str());
    if (!q.empty()) return detail::action_text("search", {q});
  }
  return detail::action_text("chit_chat");
}

/// Deterministic local backend. Handles the decision-parser template with
/// rule_ndp, answers fallback prompts with a fixed reply and QA prompts with
/// the best-matching step. It cannot adapt tasks.
class RuleBackend final : public Backend {
 public:
  static constexpr std::string_view kFallbackReply =
      "I'm not sure I can help with that, but I can help you find a recipe or a DIY project.";

  std::string id() const override { return "rule"; }

  std::string complete(const CompletionCall& call, std::stop_token /*stop*/) override {
    auto var = [&](const char* k) -> std::string {
      auto it = call.variables.find(k);
      return it == call.variables.end() ? std::string() : it->second;
    };
    switch (call.template_id) {
      case TemplateId::kNdp: {
        Phase phase = var("phase") == "execution" ? Phase::kExecution : Phase::kExploration;
        std::optional<int> step;
        if (auto s = var("current_step"); !s.empty() && s != "none") {
          try {
            step = std::stoi(s);
          } catch (const std::exception&) {
          }
        }
        return rule_ndp(phase, step, var("user_utterance"));
      }
      case TemplateId::kFallback:
        return std::string(kFallbackReply);
      case TemplateId::kQa:
        return best_step_fragment(var("Steps"), var("Question"));
      default:
        throw BackendUnavailable("rule backend cannot serve template " +
                                 std::string(to_string(call.template_id)));
    }
  }

 private:
  static std::string best_step_fragment(const std::string& steps_section, const std::string& question) {
    std::string body = steps_section;
    if (auto nl = body.find('\n'); text::starts_with(body, "|Steps:") && nl != std::string::npos) {
      body = body.substr(nl + 1);
    }
    std::string best;
    double best_score = 0.0;
    std::size_t pos = 0;
    while (pos <= body.size()) {
      auto end = body.find(";\n", pos);
      auto piece = body.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      double score = query_coverage(question, piece);
      if (score > best_score) {
        best_score = score;
        best = piece;
      }
      if (end == std::string::npos) break;
      pos = end + 2;
    }
    return best.empty() ? "<unknown>" : best;
  }
};

// ---------------------------------------------------------------------------
// Capability guard

struct GuardResult {
  std::string text;
  std::optional<std::string> blocked_by;  // rule name when the text was replaced

  bool blocked() const { return blocked_by.has_value(); }
};

struct CapabilityRule {
  std::string name;
  std::string pattern;   // ECMAScript regex, matched case-insensitively
  std::string response;  // canned correction
};

class CapabilityGuard {
 public:
  static constexpr std::string_view kEmptyReply =
      "Sorry, I'm not sure how to help with that. I can help with cooking and DIY tasks.";

  explicit CapabilityGuard(std::vector<CapabilityRule> rules) : rules_(std::move(rules)) {
    for (const auto& r : rules_) {
      compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::icase);
    }
  }

  /// Prohibitions from the fallback prompt: music, games and quizzes, news,
  /// lights, and disclosing a name.
  static CapabilityGuard defaults() {
    const std::string lead =
        R"((?:\bi can(?!'t|’t| ?not)\b|\bi'll\b|\bi will(?! not)\b|\blet me\b|\bi'm going to\b|\bi am going to\b|\bhere'?s\b|\bhere is\b|\bnow playing\b|\bi'm playing\b|\bi am playing\b|\bstarting\b))";
    return CapabilityGuard({
        {"music", lead + R"([^.!?]*\b(music|jazz|songs?|playlist|radio|tunes?|album)\b)",
         "I can't play music, but I can help with cooking and DIY."},
        {"games", R"((?:)" + lead + R"(|\blet'?s play\b)[^.!?]*\b(games?|quiz|quizzes|trivia|riddles?)\b)",
         "I can't play games or quizzes, but I can help with cooking and DIY."},
        {"news", lead + R"([^.!?]*\b(news|headlines)\b)",
         "I can't read the news, but I can help with cooking and DIY."},
        {"lights",
         R"((?:)" + lead + R"(|\bturning (?:on|off)\b|\bi(?:'ve| have) turned\b)[^.!?]*\b(lights?|lamps?)\b)",
         "I can't control the lights, but I can help with cooking and DIY."},
        {"name", R"(\bmy name is\b|\bi am called\b|\bi'm called\b|\bcall me\b)",
         "I'm an assistant for cooking and DIY tasks. How can I help?"},
    });
  }

  /// JSON array of {"name", "pattern", "response"}.
  static CapabilityGuard load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open capability rules: " + path);
    auto doc = nlohmann::json::parse(in);
    std::vector<CapabilityRule> rules;
    for (const auto& j : doc) {
      rules.push_back({j.at("name").get<std::string>(), j.at("pattern").get<std::string>(),
                       j.at("response").get<std::string>()});
    }
    return CapabilityGuard(std::move(rules));
  }

  const std::vector<CapabilityRule>& rules() const { return rules_; }

  /// Replaces text claiming a forbidden capability with that rule's canned
  /// correction; otherwise passes it through. Never returns empty text.
  GuardResult check(std::string_view text_in) const {
    if (text::trim_view(text_in).empty()) return {std::string(kEmptyReply), std::nullopt};
    const std::string s(text_in);
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      if (std::regex_search(s, compiled_[i])) return {rules_[i].response, rules_[i].name};
    }
    return {s, std::nullopt};
  }

 private:
  std::vector<CapabilityRule> rules_;
  std::vector<std::regex> compiled_;
};

inline GuardResult guard_response(std::string_view text_in, const CapabilityGuard& guard) {
  return guard.check(text_in);
}

}  // namespace tbf
