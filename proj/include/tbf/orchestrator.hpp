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

#include <array>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tbf/action_dsl.hpp"
#include "tbf/adaptation.hpp"
#include "tbf/model_gateway.hpp"
#include "tbf/qa_pipeline.hpp"
#include "tbf/taskgraph.hpp"
#include "tbf/text.hpp"

namespace tbf {

enum class Route { kInSpace, kFallback, kTimeoutDefault };

inline std::string_view to_string(Route r) {
  switch (r) {
    case Route::kInSpace: return "in_space";
    case Route::kFallback: return "fallback";
    case Route::kTimeoutDefault: return "timeout_default";
  }
  return "in_space";
}

/// Pipeline stages that have a default response list.
enum class Stage { kNdp, kFallback, kQa, kReplace };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kNdp: return "ndp";
    case Stage::kFallback: return "fallback";
    case Stage::kQa: return "qa";
    case Stage::kReplace: return "replace";
  }
  return "ndp";
}

/// Why a replacement proposal was not accepted.
enum class RejectionReason {
  kNewSearch,
  kIgnoredReplacement,
  kAnotherReplacementRequest,
  kExit,
  kSystemParsingError,
  kDeclined,
};

inline std::string_view to_string(RejectionReason r) {
  switch (r) {
    case RejectionReason::kNewSearch: return "new_search";
    case RejectionReason::kIgnoredReplacement: return "ignored_replacement";
    case RejectionReason::kAnotherReplacementRequest: return "another_replacement_request";
    case RejectionReason::kExit: return "exit";
    case RejectionReason::kSystemParsingError: return "system_parsing_error";
    case RejectionReason::kDeclined: return "declined";
  }
  return "declined";
}

struct ConversationTurn {
  Speaker speaker = Speaker::kUser;
  std::string text;
  Phase phase = Phase::kExploration;  // for system turns: phase the action was generated in
  std::int64_t ts_ms = 0;             // unix epoch milliseconds

  // System turns only.
  std::optional<ActionCode> action;
  std::optional<Route> route;
  double latency_ms = 0.0;
  std::optional<FallbackReason> fallback_reason;
  std::string raw_action;  // decision parser output as generated
};

struct PendingConfirmation {
  StructuredProposal proposal;
  std::string request;

  bool operator==(const PendingConfirmation&) const = default;
};

/// The mutable dialogue state of a session, separate from its transcript.
struct SessionState {
  Phase phase = Phase::kExploration;
  std::optional<Task> current_task;
  std::optional<int> current_step;
  std::optional<PendingConfirmation> pending;
  std::vector<ScoredTask> search_results;
  bool ended = false;

  bool operator==(const SessionState& o) const {
    if (search_results.size() != o.search_results.size()) return false;
    for (std::size_t i = 0; i < search_results.size(); ++i) {
      if (!(search_results[i].task == o.search_results[i].task) ||
          search_results[i].score != o.search_results[i].score) {
        return false;
      }
    }
    return phase == o.phase && current_task == o.current_task && current_step == o.current_step &&
           pending == o.pending && ended == o.ended;
  }
};

/// Returns a description of the first violated invariant, if any.
inline std::optional<std::string> invariant_violation(const SessionState& s) {
  const bool exec = s.phase == Phase::kExecution;
  if (exec != s.current_task.has_value()) return "phase is execution iff a task is selected";
  if (s.current_step && !exec) return "current step requires execution phase";
  if (s.pending && !exec) return "pending confirmation requires execution phase";
  if (s.current_step && (*s.current_step < 1 || *s.current_step > s.current_task->step_count())) {
    return "current step out of range";
  }
  return std::nullopt;
}

/// Action counts split by the phase the action was generated in.
struct ActionDistribution {
  std::map<std::string, std::uint64_t> exploration;
  std::map<std::string, std::uint64_t> execution;

  void add(Phase p, const std::string& label, std::uint64_t n = 1) {
    (p == Phase::kExploration ? exploration : execution)[label] += n;
  }

  void merge(const ActionDistribution& o) {
    for (const auto& [k, v] : o.exploration) exploration[k] += v;
    for (const auto& [k, v] : o.execution) execution[k] += v;
  }

  static std::uint64_t total(const std::map<std::string, std::uint64_t>& m) {
    std::uint64_t n = 0;
    for (const auto& [_, v] : m) n += v;
    return n;
  }

  double fraction(Phase p, const std::string& label) const {
    const auto& m = p == Phase::kExploration ? exploration : execution;
    auto n = total(m);
    auto it = m.find(label);
    return n == 0 || it == m.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(n);
  }

  bool empty() const { return exploration.empty() && execution.empty(); }

  bool operator==(const ActionDistribution&) const = default;

  nlohmann::json to_json() const {
    auto split = [](const std::map<std::string, std::uint64_t>& m) {
      nlohmann::json counts = nlohmann::json::object(), fractions = nlohmann::json::object();
      auto n = total(m);
      for (const auto& [k, v] : m) {
        counts[k] = v;
        fractions[k] = static_cast<double>(v) / static_cast<double>(n);
      }
      return nlohmann::json{{"total", n}, {"counts", counts}, {"fractions", fractions}};
    };
    return {{"exploration", split(exploration)}, {"execution", split(execution)}};
  }
};

/// Label used for distribution counts: the action name when something
/// parsed, otherwise "(timeout)" or "(unparsed)".
inline std::string action_label(const std::optional<ActionCode>& action, std::optional<Route> route) {
  if (action) return action->name;
  if (route == Route::kTimeoutDefault) return "(timeout)";
  return "(unparsed)";
}

inline ActionDistribution action_distribution(const std::vector<ConversationTurn>& turns) {
  ActionDistribution d;
  for (const auto& t : turns) {
    if (t.speaker == Speaker::kSystem) d.add(t.phase, action_label(t.action, t.route));
  }
  return d;
}

/// Same count from a conversation log (one JSON object per line). Lines
/// that are not system turns are skipped.
inline ActionDistribution action_distribution(std::istream& log) {
  ActionDistribution d;
  std::string line;
  while (std::getline(log, line)) {
    if (text::trim_view(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || j.value("speaker", "") != "system") continue;
    std::optional<ActionCode> action;
    if (j.contains("action") && j["action"].is_string()) {
      if (auto r = parse_action(j["action"].get<std::string>())) action = r.action();
    }
    std::optional<Route> route;
    auto rs = j.value("route", "");
    if (rs == "timeout_default") route = Route::kTimeoutDefault;
    if (rs == "fallback") route = Route::kFallback;
    if (rs == "in_space") route = Route::kInSpace;
    Phase p = j.value("phase", "") == "execution" ? Phase::kExecution : Phase::kExploration;
    d.add(p, action_label(action, route));
  }
  return d;
}

struct RouteCounts {
  std::uint64_t in_space = 0, fallback = 0, timeout_default = 0;

  void add(Route r) {
    if (r == Route::kInSpace) ++in_space;
    if (r == Route::kFallback) ++fallback;
    if (r == Route::kTimeoutDefault) ++timeout_default;
  }
  std::uint64_t total() const { return in_space + fallback + timeout_default; }
  bool operator==(const RouteCounts&) const = default;
};

struct SessionTelemetry {
  RouteCounts routes;
  ActionDistribution actions;
  std::vector<RejectionReason> rejections;
};

struct Session {
  std::string id;
  std::vector<ConversationTurn> history;
  SessionState state;
  std::chrono::steady_clock::time_point created_at;
  std::chrono::steady_clock::time_point last_active;
  std::array<std::size_t, 4> default_rotation{};
  SessionTelemetry telemetry;
};

struct SystemResponse {
  std::string text;
  std::string action;  // rendered action code; empty when nothing parsed
  Route route = Route::kInSpace;
  nlohmann::json screen;  // null when there is nothing to show
  double latency_ms = 0.0;
  Phase phase = Phase::kExploration;
  std::optional<int> current_step;
  nlohmann::json pending;  // proposal awaiting yes/no, or null
};

struct Budgets {
  int ndp_ms = 200;
  int llm_ms = 2000;
  int global_ms = 4500;

  bool operator==(const Budgets&) const = default;
};

struct OrchestratorBackends {
  std::shared_ptr<Backend> ndp;
  std::shared_ptr<Backend> fallback;
  std::shared_ptr<Backend> qa;
  std::shared_ptr<Backend> adaptation;
};

struct OrchestratorOptions {
  Budgets budgets;
  std::chrono::minutes idle_timeout{30};
  std::size_t qa_token_budget = 512;
  int search_k = 3;
  int max_output_chars = 1000;
  bool concurrent_rewrites = false;
};

struct SessionNotFound : std::out_of_range {
  explicit SessionNotFound(const std::string& id) : std::out_of_range("session not found: " + id) {}
};

/// Per-turn timing handed to handlers.
struct TurnContext {
  std::string utterance;
  std::chrono::steady_clock::time_point start;
  std::chrono::steady_clock::time_point deadline;

  static TurnContext starting_now(std::string utterance, const Budgets& b) {
    auto now = std::chrono::steady_clock::now();
    return {std::move(utterance), now, now + std::chrono::milliseconds(b.global_ms)};
  }

  int remaining_ms() const {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    return static_cast<int>(std::max<long long>(0, left.count()));
  }
};

/// Fixed per-stage lists; each session rotates through them independently.
inline const std::vector<std::string>& default_responses(Stage stage) {
  static const std::map<Stage, std::vector<std::string>> kLists = {
      {Stage::kNdp,
       {"Sorry, I didn't quite catch that. Could you say it again?",
        "Hmm, I missed that. Could you repeat it?", "Sorry, could you put that another way?"}},
      {Stage::kFallback,
       {"I'm not sure about that one. I can help you find a recipe or a DIY project.",
        "Let's get back to cooking or DIY. What would you like to do?",
        "I didn't quite get that. You can ask me to search for a task or to go to the next step."}},
      {Stage::kQa,
       {"Sorry, I couldn't find an answer to that right now. You can ask another question or say next.",
        "I'm not sure about that one. Shall we carry on with the task?",
        "I don't have an answer for that yet. Would you like to hear the current step again?"}},
      {Stage::kReplace,
       {"Sorry, I can't work out a replacement right now, so let's keep the original.",
        "I couldn't update the task just now. We'll stick with the original for now.",
        "Sorry, swapping that didn't work this time. Let's continue with the original task."}},
  };
  return kLists.at(stage);
}

inline std::int64_t now_epoch_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline nlohmann::json task_card(const Task& t) {
  nlohmann::json reqs = nlohmann::json::array();
  for (const auto& r : t.requirements) {
    reqs.push_back({{"name", r.name}, {"quantity_text", r.quantity_text ? nlohmann::json(*r.quantity_text) : nullptr}});
  }
  return {{"id", t.id},
          {"title", t.title},
          {"description", t.description},
          {"domain", std::string(to_string(t.domain))},
          {"requirements", std::move(reqs)},
          {"step_count", t.step_count()}};
}

inline nlohmann::json turn_json(const ConversationTurn& t) {
  nlohmann::json j = {{"speaker", std::string(to_string(t.speaker))},
                      {"text", t.text},
                      {"phase", std::string(to_string(t.phase))},
                      {"ts", t.ts_ms}};
  if (t.speaker == Speaker::kSystem) {
    j["action"] = t.action ? nlohmann::json(render_action(*t.action)) : nullptr;
    j["route"] = t.route ? nlohmann::json(std::string(to_string(*t.route))) : nullptr;
    j["latency_ms"] = t.latency_ms;
    if (t.fallback_reason) j["fallback_reason"] = std::string(to_string(*t.fallback_reason));
  } else {
    j["action"] = nullptr;
    j["route"] = nullptr;
    j["latency_ms"] = nullptr;
  }
  return j;
}

inline nlohmann::json session_json(const Session& s) {
  const auto& st = s.state;
  nlohmann::json results = nlohmann::json::array();
  for (std::size_t i = 0; i < st.search_results.size(); ++i) {
    results.push_back({{"index", i + 1},
                       {"id", st.search_results[i].task.id},
                       {"title", st.search_results[i].task.title},
                       {"score", st.search_results[i].score}});
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& t : s.history) history.push_back(turn_json(t));
  return {{"session_id", s.id},
          {"phase", std::string(to_string(st.phase))},
          {"current_step", st.current_step ? nlohmann::json(*st.current_step) : nullptr},
          {"current_task", st.current_task ? to_json(*st.current_task) : nullptr},
          {"pending", st.pending ? to_json(st.pending->proposal) : nullptr},
          {"search_results", std::move(results)},
          {"ended", st.ended},
          {"history", std::move(history)}};
}

inline nlohmann::json response_json(const SystemResponse& r) {
  return {{"response", r.text},
          {"action", r.action},
          {"route", std::string(to_string(r.route))},
          {"phase", std::string(to_string(r.phase))},
          {"current_step", r.current_step ? nlohmann::json(*r.current_step) : nullptr},
          {"screen", r.screen},
          {"pending", r.pending},
          {"latency_ms", r.latency_ms}};
}

/// Global counters plus a bounded window of recent end-to-end latencies.
struct TelemetrySnapshot {
  std::uint64_t turns = 0;
  RouteCounts routes;
  ActionDistribution actions;
  std::vector<double> latencies_ms;
};

class Orchestrator {
 public:
  using LogSink = std::function<void(const std::string&)>;

  static constexpr std::size_t kLatencyWindow = 10000;
  static constexpr std::string_view kReprompt = "Sorry, I didn't hear anything. What would you like to do?";

  Orchestrator(std::vector<Task> catalog, OrchestratorBackends backends, OrchestratorOptions options = {},
               ActionSpace space = ActionSpace::defaults(), PromptLibrary prompts = PromptLibrary(),
               CapabilityGuard guard = CapabilityGuard::defaults())
      : catalog_(std::move(catalog)),
        backends_(std::move(backends)),
        options_(options),
        space_(std::move(space)),
        prompts_(std::move(prompts)),
        guard_(std::move(guard)),
        rng_(std::random_device{}()) {
    if (space_.empty()) throw std::invalid_argument("action space must not be empty");
  }

  void set_log_sink(LogSink sink) {
    std::lock_guard lock(log_mu_);
    log_ = std::move(sink);
  }

  const OrchestratorOptions& options() const { return options_; }
  const ActionSpace& action_space() const { return space_; }
  const std::vector<Task>& catalog() const { return catalog_; }

  std::string create_session() {
    evict_idle(std::chrono::steady_clock::now());
    auto slot = std::make_shared<Slot>();
    std::lock_guard lock(sessions_mu_);
    std::string id;
    do {
      id = random_id();
    } while (sessions_.count(id));
    slot->session.id = id;
    slot->session.created_at = slot->session.last_active = std::chrono::steady_clock::now();
    sessions_[id] = slot;
    return id;
  }

  bool has_session(const std::string& id) const {
    std::lock_guard lock(sessions_mu_);
    return sessions_.count(id) > 0;
  }

  std::size_t session_count() const {
    std::lock_guard lock(sessions_mu_);
    return sessions_.size();
  }

  /// Copy of a session, taken under its lock.
  Session snapshot(const std::string& id) const {
    auto slot = find(id);
    std::lock_guard lock(slot->mu);
    return slot->session;
  }

  std::vector<Session> snapshot_all() const {
    std::vector<std::shared_ptr<Slot>> slots;
    {
      std::lock_guard lock(sessions_mu_);
      for (const auto& [_, s] : sessions_) slots.push_back(s);
    }
    std::vector<Session> out;
    for (const auto& s : slots) {
      std::lock_guard lock(s->mu);
      out.push_back(s->session);
    }
    return out;
  }

  /// Drops sessions idle for longer than the configured timeout.
  std::size_t evict_idle(std::chrono::steady_clock::time_point now) {
    std::lock_guard lock(sessions_mu_);
    std::size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::unique_lock slot_lock(it->second->mu, std::try_to_lock);
      if (slot_lock.owns_lock() && now - it->second->session.last_active > options_.idle_timeout) {
        slot_lock.unlock();
        it = sessions_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  /// One dialogue turn. Calls for the same session are serialized; calls
  /// for different sessions run concurrently.
  SystemResponse handle_utterance(const std::string& session_id, std::string_view utterance) {
    auto slot = find(session_id);
    std::lock_guard lock(slot->mu);
    Session& s = slot->session;
    if (s.state.ended) throw SessionNotFound(session_id);

    auto ctx = TurnContext::starting_now(text::trim(utterance), options_.budgets);
    s.last_active = ctx.start;
    if (ctx.utterance.empty()) {
      SystemResponse r;
      r.text = std::string(kReprompt);
      fill_state(s, r);
      return r;
    }

    const Phase input_phase = s.state.phase;
    ConversationTurn user_turn;
    user_turn.text = ctx.utterance;
    user_turn.phase = input_phase;
    user_turn.ts_ms = now_epoch_ms();
    s.history.push_back(user_turn);
    log_turn(s, user_turn, {});

    SystemResponse resp;
    std::optional<ActionCode> action;
    std::optional<FallbackReason> reason;
    std::string raw, warning;

    auto ndp = call_ndp(s, ctx);
    if (!ndp) {
      resp = default_reply(s, Stage::kNdp);
    } else {
      raw = *ndp;
      auto parsed = parse_action(raw);
      if (!parsed) {
        reason = FallbackReason::kParseError;
      } else {
        action = parsed.action();
        if (!parsed.trailing().empty()) warning = "ignored trailing text: " + parsed.trailing();
        auto verdict = validate_action(*action, space_);
        if (std::holds_alternative<OutOfSpace>(verdict)) reason = FallbackReason::kOutOfSpace;
        if (std::holds_alternative<ArityOrTypeMismatch>(verdict)) reason = FallbackReason::kArityOrTypeMismatch;
      }
      if (reason) {
        if (s.state.pending) reject_pending(s, RejectionReason::kSystemParsingError);
        resp = fallback_llm(s, ctx);
        if (resp.route == Route::kInSpace) resp.route = Route::kFallback;
        resp.action = action ? render_action(*action) : std::string();
      } else {
        resp = dispatch(s, *action, ctx);
      }
    }

    resp.latency_ms = elapsed_ms(ctx.start);
    fill_state(s, resp);

    ConversationTurn sys;
    sys.speaker = Speaker::kSystem;
    sys.text = resp.text;
    sys.phase = input_phase;
    sys.ts_ms = now_epoch_ms();
    sys.action = action;
    sys.route = resp.route;
    sys.latency_ms = resp.latency_ms;
    sys.fallback_reason = reason;
    sys.raw_action = raw;
    s.history.push_back(sys);
    record(s, sys);
    log_turn(s, sys, warning);

    if (s.state.ended) {
      std::lock_guard map_lock(sessions_mu_);
      sessions_.erase(session_id);
    }
    return resp;
  }

  /// Executes an in-space action against a session. Handler failures become
  /// apologetic replies and leave the state untouched.
  SystemResponse dispatch(Session& s, const ActionCode& a, const TurnContext& ctx) {
    if (s.state.pending && a.name != "confirm") {
      RejectionReason why = RejectionReason::kIgnoredReplacement;
      if (a.name == "search") why = RejectionReason::kNewSearch;
      if (a.name == "replace") why = RejectionReason::kAnotherReplacementRequest;
      if (a.name == "stop") why = RejectionReason::kExit;
      reject_pending(s, why);
    }
    SystemResponse r;
    r.action = render_action(a);
    const auto& n = a.name;
    if (n == "search") {
      r = handle_search(s, a.str_arg(0));
    } else if (n == "select") {
      r = handle_select(s, a.int_arg(0));
    } else if (n == "step_select") {
      r = handle_navigation(s, NavCommand::go_to(static_cast<int>(std::clamp<std::int64_t>(a.int_arg(0), -1, 1 << 20))));
    } else if (n == "next") {
      r = handle_navigation(s, NavCommand::next());
    } else if (n == "previous") {
      r = handle_navigation(s, NavCommand::previous());
    } else if (n == "repeat") {
      r = handle_navigation(s, NavCommand::repeat());
    } else if (n == "answer_question") {
      r = s.state.current_task ? handle_question(s, ctx) : fallback_llm(s, ctx);
    } else if (n == "replace") {
      r = handle_replace(s, a.str_arg(0), ctx);
    } else if (n == "confirm") {
      r = handle_confirm(s, a.str_arg(0), ctx);
    } else if (n == "stop") {
      r = handle_stop(s);
    } else {
      r = fallback_llm(s, ctx);  // chit_chat, fallback, and any unhandled action
    }
    r.action = render_action(a);
    return r;
  }

  /// Next entry of the per-session rotation for `stage`.
  std::string default_response(Session& s, Stage stage) const {
    const auto& list = default_responses(stage);
    auto& counter = s.default_rotation[static_cast<std::size_t>(stage)];
    return list[counter++ % list.size()];
  }

  TelemetrySnapshot telemetry() const {
    TelemetrySnapshot t;
    t.turns = turns_.load();
    t.routes.in_space = route_in_space_.load();
    t.routes.fallback = route_fallback_.load();
    t.routes.timeout_default = route_timeout_.load();
    std::lock_guard lock(telemetry_mu_);
    t.actions = actions_;
    t.latencies_ms.assign(latencies_.begin(), latencies_.end());
    return t;
  }

 private:
  struct Slot {
    mutable std::mutex mu;
    Session session;
  };

  std::shared_ptr<Slot> find(const std::string& id) const {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound(id);
    return it->second;
  }

  std::string random_id() {
    std::uniform_int_distribution<std::uint64_t> dist;
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(dist(rng_)),
                  static_cast<unsigned long long>(dist(rng_)));
    return buf;
  }

  static double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }

  int llm_budget(const TurnContext& ctx) const { return std::min(options_.budgets.llm_ms, ctx.remaining_ms()); }

  static std::string last_system_text(const Session& s) {
    for (auto it = s.history.rbegin(); it != s.history.rend(); ++it) {
      if (it->speaker == Speaker::kSystem) return it->text;
    }
    return {};
  }

  static std::vector<DialogueLine> dialogue(const Session& s, std::size_t drop_last = 0) {
    std::vector<DialogueLine> out;
    for (std::size_t i = 0; i + drop_last < s.history.size(); ++i) {
      out.push_back({s.history[i].speaker, s.history[i].text});
    }
    return out;
  }

  std::optional<std::string> call_ndp(Session& s, const TurnContext& ctx) {
    int budget = std::min(options_.budgets.ndp_ms, ctx.remaining_ms());
    if (budget <= 0) return std::nullopt;
    std::vector<std::string> recent;
    auto lines = dialogue(s, 1);
    for (std::size_t i = lines.size() > 6 ? lines.size() - 6 : 0; i < lines.size(); ++i) {
      recent.push_back(detail::history_line(lines[i]));
    }
    const auto& st = s.state;
    GenerateRequest req{TemplateId::kNdp,
                        {{"actions", space_.describe()},
                         {"phase", std::string(to_string(st.phase))},
                         {"task_title", st.current_task ? st.current_task->title : "none"},
                         {"current_step", st.current_step ? std::to_string(*st.current_step) : "none"},
                         {"history", text::join(recent, "\n")},
                         {"last_system_response", last_system_text(s)},
                         {"user_utterance", ctx.utterance}},
                        budget,
                        200};
    try {
      auto resp = generate(backends_.ndp, req, prompts_);
      if (resp.timed_out) return std::nullopt;
      return resp.text;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  SystemResponse default_reply(Session& s, Stage stage) const {
    SystemResponse r;
    r.text = default_response(s, stage);
    r.route = Route::kTimeoutDefault;
    return r;
  }

  SystemResponse fallback_llm(Session& s, const TurnContext& ctx) {
    int budget = llm_budget(ctx);
    if (budget <= 0) return default_reply(s, Stage::kFallback);
    GenerateRequest req{TemplateId::kFallback,
                        {{"last_system_response", last_system_text(s)}, {"user_utterance", ctx.utterance}},
                        budget,
                        options_.max_output_chars};
    try {
      auto resp = generate(backends_.fallback, req, prompts_);
      if (resp.timed_out) return default_reply(s, Stage::kFallback);
      SystemResponse r;
      r.text = guard_response(resp.text, guard_).text;
      return r;
    } catch (const std::exception&) {
      return default_reply(s, Stage::kFallback);
    }
  }

  static nlohmann::json step_screen(const Task& t, int index) {
    return {{"type", "step"},
            {"index", index},
            {"total", t.step_count()},
            {"text", t.step(index).text},
            {"task", task_card(t)}};
  }

  static std::string count_word(std::size_t n) {
    static const char* kWords[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
    return n <= 10 ? kWords[n] : std::to_string(n);
  }

  SystemResponse handle_search(Session& s, const std::string& query) {
    SystemResponse r;
    std::vector<ScoredTask> hits;
    if (!catalog_.empty()) {
      for (auto& h : search_tasks(query, catalog_, options_.search_k)) {
        if (h.score > 0.0) hits.push_back(std::move(h));
      }
    }
    if (hits.empty()) {
      r.text = "Sorry, I couldn't find anything for \"" + query + "\". Could you try another search?";
      return r;
    }
    s.state = SessionState{};
    s.state.search_results = hits;

    static const char* kOrdinals[] = {"First", "second", "third", "fourth", "fifth"};
    std::string text = hits.size() == 1 ? "How about this match? It's: " + hits[0].task.title + "."
                                        : "How about these " + count_word(hits.size()) + " matches? ";
    nlohmann::json options = nlohmann::json::array();
    for (std::size_t i = 0; i < hits.size(); ++i) {
      if (hits.size() > 1) {
        text += std::string(i < 5 ? kOrdinals[i] : "next") + (i == 0 ? " is: " : ": ") + hits[i].task.title +
                (i + 1 == hits.size() ? "." : ", ");
      }
      options.push_back({{"index", i + 1},
                         {"id", hits[i].task.id},
                         {"title", hits[i].task.title},
                         {"description", hits[i].task.description},
                         {"score", hits[i].score}});
    }
    r.text = text;
    r.screen = {{"type", "options"}, {"options", std::move(options)}};
    return r;
  }

  SystemResponse handle_select(Session& s, std::int64_t choice) {
    SystemResponse r;
    auto& st = s.state;
    if (st.search_results.empty()) {
      r.text = st.current_task ? "We're already working on " + st.current_task->title +
                                     ". Say \"search for\" and a dish or project to find something else."
                               : "Let's search for a task first. What would you like to make?";
      return r;
    }
    const auto n = static_cast<std::int64_t>(st.search_results.size());
    if (choice < 1 || choice > n) {
      r.text = "Please pick an option between 1 and " + std::to_string(n) + ".";
      return r;
    }
    Task chosen = st.search_results[static_cast<std::size_t>(choice - 1)].task;
    st = SessionState{};
    st.phase = Phase::kExecution;
    st.current_task = std::move(chosen);
    st.current_step = 1;
    const auto& t = *st.current_task;
    r.text = "Great choice! Let's get started with " + t.title + ". Step 1 of " + std::to_string(t.step_count()) +
             ": " + t.step(1).text;
    r.screen = step_screen(t, 1);
    return r;
  }

  SystemResponse handle_navigation(Session& s, NavCommand cmd) {
    SystemResponse r;
    auto& st = s.state;
    if (!st.current_task) {
      r.text = "We haven't started a task yet. What would you like to make?";
      return r;
    }
    const auto& t = *st.current_task;
    NavResult nav;
    try {
      nav = navigate(st.current_step, cmd, t.step_count());
    } catch (const RangeError&) {
      r.text = "This task has " + std::to_string(t.step_count()) + " steps. Which one would you like?";
      return r;
    } catch (const NotStartedError&) {
      r.text = "Let's start at the beginning. Say \"go to step 1\".";
      return r;
    }
    st.current_step = nav.index;
    const auto& step = t.step(nav.index);
    if (nav.at_boundary && cmd.kind == NavCommand::Kind::kNext) {
      r.text = "That was the last step, so you're done! Step " + std::to_string(nav.index) + " was: " + step.text;
    } else if (nav.at_boundary) {
      r.text = "You're on the first step. Step 1: " + step.text;
    } else {
      r.text = "Step " + std::to_string(nav.index) + ": " + step.text;
    }
    r.screen = step_screen(t, nav.index);
    return r;
  }

  SystemResponse handle_question(Session& s, const TurnContext& ctx) {
    const Task& task = *s.state.current_task;
    const auto history = dialogue(s, 1);
    QAOptions qo{&prompts_, &guard_, 0, options_.max_output_chars, options_.qa_token_budget, count_whitespace_tokens};

    SystemResponse r;
    if (s.state.current_step) r.screen = step_screen(task, *s.state.current_step);
    auto attempt = [&](QAMode mode, const std::shared_ptr<Backend>& backend) -> std::optional<QAAnswer> {
      qo.deadline_ms = llm_budget(ctx);
      if (qo.deadline_ms <= 0) return std::nullopt;
      try {
        auto out = answer_question(task, history, ctx.utterance, mode, backend, qo);
        if (auto* a = std::get_if<QAAnswer>(&out)) return *a;
      } catch (const BudgetTooSmall&) {
        qo.token_budget = std::numeric_limits<std::size_t>::max();
        return std::nullopt;
      } catch (const std::exception&) {
      }
      return std::nullopt;
    };

    auto extractive = attempt(QAMode::kExtractive, backends_.qa);
    if (extractive && extractive->grounded) {
      r.text = extractive->text;
      return r;
    }
    auto abstractive = attempt(QAMode::kAbstractive, backends_.fallback);
    if (abstractive) {
      r.text = abstractive->text;
      return r;
    }
    auto d = default_reply(s, Stage::kQa);
    d.screen = r.screen;
    return d;
  }

  static std::string failure_reply(const AdaptationFailure& f, std::string_view what) {
    if (f.kind == FailureKind::kUnknownRequirement) {
      return "I couldn't find " + std::string(what) + " in this task's requirements.";
    }
    return "Sorry, I couldn't come up with a good replacement for " + std::string(what) + ".";
  }

  AdaptationOptions adaptation_options(const TurnContext& ctx) const {
    AdaptationOptions o;
    o.prompts = &prompts_;
    o.call_deadline_ms = options_.budgets.llm_ms;
    o.max_output_chars = options_.max_output_chars;
    o.overall_deadline = ctx.deadline;
    o.concurrent_rewrites = options_.concurrent_rewrites;
    return o;
  }

  SystemResponse handle_replace(Session& s, const std::string& what, const TurnContext& ctx) {
    SystemResponse r;
    if (!s.state.current_task) {
      r.text = "Let's pick a task first, then I can help you swap things out.";
      return r;
    }
    const Task& task = *s.state.current_task;
    if (s.state.current_step) r.screen = step_screen(task, *s.state.current_step);
    auto proposed = propose_replacement(task, ctx.utterance, backends_.adaptation, adaptation_options(ctx));
    if (auto* f = std::get_if<AdaptationFailure>(&proposed)) {
      if (f->kind == FailureKind::kTimeout || f->kind == FailureKind::kUnavailable) {
        auto d = default_reply(s, Stage::kReplace);
        d.screen = r.screen;
        return d;
      }
      r.text = failure_reply(*f, what);
      return r;
    }
    auto& proposal = std::get<StructuredProposal>(proposed);
    r.text = "I can replace " + describe_pairs(proposal.pairs) +
             " and update the steps to match. Would you like me to do that?";
    s.state.pending = PendingConfirmation{proposal, ctx.utterance};
    r.screen = {{"type", "proposal"}, {"proposal", to_json(proposal)}, {"task", task_card(task)}};
    return r;
  }

  SystemResponse handle_confirm(Session& s, const std::string& answer, const TurnContext& ctx) {
    SystemResponse r;
    auto& st = s.state;
    if (!st.pending) {
      r.text = "There's nothing to confirm right now.";
      if (st.current_task && st.current_step) r.screen = step_screen(*st.current_task, *st.current_step);
      return r;
    }
    const auto a = text::fold_key(answer);
    static const std::set<std::string> kYes = {"yes", "y", "yeah", "yep", "sure", "ok", "okay", "true"};
    static const std::set<std::string> kNo = {"no", "n", "nope", "nah", "false"};
    if (!kYes.count(a) && !kNo.count(a)) {
      r.text = "Should I make that change? Please say yes or no.";
      return r;
    }
    auto pending = *st.pending;
    st.pending.reset();
    const Task& task = *st.current_task;
    if (kNo.count(a)) {
      s.telemetry.rejections.push_back(RejectionReason::kDeclined);
      r.text = "No problem, we'll keep the original.";
      if (st.current_step) r.screen = step_screen(task, *st.current_step);
      return r;
    }
    auto rewrites = rewrite_steps(task, pending.proposal, backends_.adaptation, adaptation_options(ctx));
    auto applied = apply_rewrites(task, rewrites);
    if (auto* f = std::get_if<AdaptationFailure>(&applied)) {
      if (f->kind == FailureKind::kTimeout) return default_reply(s, Stage::kReplace);
      r.text = "Sorry, I couldn't update the task, so let's keep the original.";
      if (st.current_step) r.screen = step_screen(task, *st.current_step);
      return r;
    }
    st.current_task = std::get<Task>(std::move(applied));
    const int step = st.current_step.value_or(1);
    st.current_step = step;
    r.text = success_summary(rewrites) + " Step " + std::to_string(step) + ": " + st.current_task->step(step).text;
    r.screen = step_screen(*st.current_task, step);
    return r;
  }

  SystemResponse handle_stop(Session& s) {
    SystemResponse r;
    s.state = SessionState{};
    s.state.ended = true;
    r.text = "Thanks for spending time with me. Goodbye!";
    return r;
  }

  void reject_pending(Session& s, RejectionReason why) {
    s.state.pending.reset();
    s.telemetry.rejections.push_back(why);
  }

  static void fill_state(const Session& s, SystemResponse& r) {
    r.phase = s.state.phase;
    r.current_step = s.state.current_step;
    r.pending = s.state.pending ? to_json(s.state.pending->proposal) : nlohmann::json(nullptr);
    if (r.phase == Phase::kExploration && r.screen.is_object() && r.screen.value("type", "") != "options") {
      r.screen = nullptr;
    }
    if (r.phase == Phase::kExecution && r.screen.is_object() && r.screen.value("type", "") == "options") {
      r.screen = nullptr;
    }
  }

  void record(Session& s, const ConversationTurn& sys) {
    const auto label = action_label(sys.action, sys.route);
    s.telemetry.routes.add(*sys.route);
    s.telemetry.actions.add(sys.phase, label);
    ++turns_;
    switch (*sys.route) {
      case Route::kInSpace: ++route_in_space_; break;
      case Route::kFallback: ++route_fallback_; break;
      case Route::kTimeoutDefault: ++route_timeout_; break;
    }
    std::lock_guard lock(telemetry_mu_);
    actions_.add(sys.phase, label);
    latencies_.push_back(sys.latency_ms);
    if (latencies_.size() > kLatencyWindow) latencies_.pop_front();
  }

  void log_turn(const Session& s, const ConversationTurn& t, const std::string& warning) {
    std::lock_guard lock(log_mu_);
    if (!log_) return;
    auto j = turn_json(t);
    j["session_id"] = s.id;
    if (t.speaker == Speaker::kSystem && !t.raw_action.empty() && !t.action) j["raw_action"] = t.raw_action;
    if (!warning.empty()) j["warning"] = warning;
    log_(j.dump());
  }

  std::vector<Task> catalog_;
  OrchestratorBackends backends_;
  OrchestratorOptions options_;
  ActionSpace space_;
  PromptLibrary prompts_;
  CapabilityGuard guard_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::mt19937_64 rng_;

  std::atomic<std::uint64_t> turns_{0}, route_in_space_{0}, route_fallback_{0}, route_timeout_{0};
  mutable std::mutex telemetry_mu_;
  ActionDistribution actions_;
  std::deque<double> latencies_;

  std::mutex log_mu_;
  LogSink log_;
};

}  // namespace tbf
