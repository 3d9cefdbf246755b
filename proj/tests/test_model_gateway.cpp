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

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "tbf/model_gateway.hpp"

using namespace tbf;
using namespace std::chrono_literals;

namespace {

GenerateRequest fallback_request(int deadline_ms, int max_chars = 1000) {
  return {TemplateId::kFallback, {{"last_system_response", ""}, {"user_utterance", "hi"}}, deadline_ms, max_chars};
}

}  // namespace

TEST(Generate, ReturnsBackendText) {
  auto b = ScriptedBackend::of({"hello there"});
  auto r = generate(b, fallback_request(500));
  EXPECT_FALSE(r.timed_out);
  EXPECT_EQ(r.text, "hello there");
  EXPECT_EQ(r.backend_id, "scripted");
  EXPECT_LT(r.latency_ms, 500);
}

TEST(Generate, TimesOutAtDeadline) {
  auto b = std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Reply>{{"late", 3000ms, false}});
  const auto start = std::chrono::steady_clock::now();
  auto r = generate(b, fallback_request(150));
  const auto wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  EXPECT_TRUE(r.timed_out);
  EXPECT_TRUE(r.text.empty());
  EXPECT_GE(r.latency_ms, 150);
  EXPECT_LT(wall, 400);
}

TEST(Generate, TruncatesOutput) {
  auto b = ScriptedBackend::of({"abcdefghij"});
  EXPECT_EQ(generate(b, fallback_request(500, 4)).text, "abcd");
}

TEST(Generate, PropagatesBackendFailures) {
  auto down = std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Reply>{{"", 0ms, true}});
  EXPECT_THROW(generate(down, fallback_request(500)), BackendUnavailable);
  auto empty = ScriptedBackend::of({});
  EXPECT_THROW(generate(empty, fallback_request(500)), ScriptExhausted);
  EXPECT_THROW(generate(nullptr, fallback_request(500)), BackendUnavailable);
}

TEST(Generate, ValidatesRequest) {
  auto b = ScriptedBackend::of({"x"});
  EXPECT_THROW(generate(b, fallback_request(0)), std::invalid_argument);
  EXPECT_THROW(generate(b, fallback_request(100, 0)), std::invalid_argument);
  GenerateRequest missing{TemplateId::kFallback, {{"user_utterance", "hi"}}, 100, 100};
  EXPECT_THROW(generate(b, missing), MissingVariable);
  EXPECT_EQ(b->calls(), 0u);
}

TEST(ScriptedBackend, LoadsJsonLines) {
  auto path = std::filesystem::temp_directory_path() / "tbf_script_test.jsonl";
  {
    std::ofstream out(path);
    out << R"({"text": "one"})" << "\n\n" << R"({"text": "two", "delay_ms": 5, "unavailable": true})" << "\n";
  }
  auto b = ScriptedBackend::load(path.string());
  EXPECT_EQ(b->remaining(), 2u);
  EXPECT_EQ(generate(b, fallback_request(500)).text, "one");
  EXPECT_THROW(generate(b, fallback_request(500)), BackendUnavailable);
  std::filesystem::remove(path);
}

struct NdpCase {
  Phase phase;
  std::optional<int> step;
  const char* utterance;
  const char* expected;
};

TEST(RuleNdp, MapsUtterancesToActions) {
  const std::vector<NdpCase> cases = {
      {Phase::kExploration, std::nullopt, "Do you have Spanish recipes", R"(search("spanish recipes"))"},
      {Phase::kExploration, std::nullopt, "search for veggie pizza", R"(search("veggie pizza"))"},
      {Phase::kExploration, std::nullopt, "the first one", "select(1)"},
      {Phase::kExploration, std::nullopt, "select option 2", "select(2)"},
      {Phase::kExploration, std::nullopt, "how are you today", "chit_chat()"},
      {Phase::kExploration, std::nullopt, "stop", "stop()"},
      {Phase::kExecution, 1, "what's the step after this one", "step_select(2)"},
      {Phase::kExecution, 3, "go to step 5", "step_select(5)"},
      {Phase::kExecution, 3, "next", "next()"},
      {Phase::kExecution, 3, "go back", "previous()"},
      {Phase::kExecution, 3, "repeat that", "repeat()"},
      {Phase::kExecution, 3, "how long do I grill it?", "answer_question()"},
      {Phase::kExecution, 3, "I don't have peanut oil", R"(replace("peanut oil"))"},
      {Phase::kExecution, 3, "can I use olive oil instead of peanut oil", R"(replace("peanut oil"))"},
      {Phase::kExecution, 3, "yes please", R"(confirm("yes"))"},
      {Phase::kExecution, 3, "no thanks", R"(confirm("no"))"},
      {Phase::kExecution, 3, "play some smooth jazz", "fallback()"},
  };
  for (const auto& c : cases) {
    EXPECT_EQ(rule_ndp(c.phase, c.step, c.utterance), c.expected) << c.utterance;
  }
}

TEST(RuleBackend, ServesNdpFallbackAndQa) {
  auto rule = std::make_shared<RuleBackend>();
  GenerateRequest ndp{TemplateId::kNdp,
                      {{"actions", ""}, {"phase", "execution"}, {"task_title", "x"}, {"current_step", "2"},
                       {"history", ""}, {"last_system_response", ""}, {"user_utterance", "next step please"}},
                      500,
                      200};
  EXPECT_EQ(generate(rule, ndp).text, "next()");
  EXPECT_EQ(generate(rule, fallback_request(500)).text, RuleBackend::kFallbackReply);
  GenerateRequest qa{TemplateId::kQa,
                     {{"Description", ""}, {"Ingredients", ""}, {"Question", "how long do i soak the arame"},
                      {"Steps", "|Steps:\nsoak arame in cold water until tender.;\ndrain and transfer."}},
                     500,
                     500};
  EXPECT_EQ(generate(rule, qa).text, "soak arame in cold water until tender.");
  GenerateRequest rewrite{TemplateId::kTaskRewrite,
                          {{"title", ""}, {"replacements", ""}, {"step_index", "1"}, {"step_text", ""}},
                          500,
                          500};
  EXPECT_THROW(generate(rule, rewrite), BackendUnavailable);
}

TEST(CapabilityGuard, BlocksForbiddenCapabilityClaims) {
  auto g = CapabilityGuard::defaults();
  auto jazz = guard_response("Sure, I can play some smooth jazz. What kind of jazz do you want to hear?", g);
  EXPECT_EQ(jazz.blocked_by, "music");
  EXPECT_EQ(guard_response("I'll turn on the lights for you.", g).blocked_by, "lights");
  EXPECT_EQ(guard_response("Let's play a quiz!", g).blocked_by, "games");
  EXPECT_EQ(guard_response("Here's the latest news.", g).blocked_by, "news");
  EXPECT_EQ(guard_response("My name is Chef Bot.", g).blocked_by, "name");
}

TEST(CapabilityGuard, PassesRefusalsAndOrdinaryText) {
  auto g = CapabilityGuard::defaults();
  for (const char* ok : {"I'm sorry, I'm not able to turn on or off the lights.", "I can't play music, sorry.",
                         "Try adding a pinch of salt to the jazz-themed party snacks.",
                         "You can start a new search by saying cancel."}) {
    auto r = guard_response(ok, g);
    EXPECT_FALSE(r.blocked()) << ok;
    EXPECT_EQ(r.text, ok);
  }
  EXPECT_EQ(guard_response("   ", g).text, CapabilityGuard::kEmptyReply);
}

TEST(CapabilityGuard, ShippedRulesMatchDefaults) {
  auto shipped = CapabilityGuard::load((fixtures::data_dir() / "capability_rules.json").string());
  auto defaults = CapabilityGuard::defaults();
  ASSERT_EQ(shipped.rules().size(), defaults.rules().size());
  for (std::size_t i = 0; i < shipped.rules().size(); ++i) {
    EXPECT_EQ(shipped.rules()[i].pattern, defaults.rules()[i].pattern);
    EXPECT_EQ(shipped.rules()[i].response, defaults.rules()[i].response);
  }
}
