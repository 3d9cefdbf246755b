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

#include <algorithm>
#include <random>
#include <set>

#include "support.hpp"
#include "tbf/qa_pipeline.hpp"

using namespace tbf;

namespace {

// Dice coefficient over distinct lowercase alnum tokens, computed by hand.
double dice_oracle(const std::string& a, const std::string& b) {
  auto toks = [](const std::string& s) {
    std::set<std::string> out;
    std::string cur;
    for (char c : s + " ") {
      if (std::isalnum(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80) {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (!cur.empty()) {
        out.insert(cur);
        cur.clear();
      }
    }
    return out;
  };
  auto x = toks(a), y = toks(b);
  if (x.empty() && y.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : x) common += y.count(t);
  return 2.0 * static_cast<double>(common) / static_cast<double>(x.size() + y.size());
}

// Brute force: every start position, exact compare, then lowercase compare.
std::optional<std::size_t> naive_find(const std::string& needle, const std::string& hay, bool fold) {
  if (needle.empty()) return std::nullopt;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    bool eq = true;
    for (std::size_t k = 0; k < needle.size() && eq; ++k) {
      char a = hay[i + k], b = needle[k];
      if (fold) {
        a = static_cast<char>(std::tolower(static_cast<unsigned char>(a)));
        b = static_cast<char>(std::tolower(static_cast<unsigned char>(b)));
      }
      eq = a == b;
    }
    if (eq) return i;
  }
  return std::nullopt;
}

}  // namespace

TEST(QaContext, FullSerializationMatchesCatalogLayout) {
  const auto ctx = serialize_task_context(fixtures::cucumber_salad());
  EXPECT_TRUE(ctx.starts_with("Title:\ncucumber, radish and seaweed salad\n\n|Description:\n noodlelike"));
  EXPECT_NE(ctx.find("|Ingredients:\n1 cup (1/2 ounce) dried arame seaweed\n2 large cucumbers, halved lengthwise"),
            std::string::npos);
  EXPECT_NE(ctx.find("drain and transfer to a large bowl.;\nadd cucumbers, radishes, rice vinegar and tamari and toss "
                     "to combine.;\ncover"),
            std::string::npos);
  EXPECT_NE(ctx.find("2 large cucumbers"), std::string::npos);
}

TEST(QaRanking, MatchesDiceOracleAndOrdersTies) {
  auto task = fixtures::stroganoff();
  const std::string q = "How long are the garlic and onions supposed to cook for?";
  auto ranked = rank_steps(q, task.steps);
  ASSERT_EQ(ranked.size(), task.steps.size());
  for (const auto& r : ranked) EXPECT_DOUBLE_EQ(r.score, dice_oracle(q, task.step(r.index).text));
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    EXPECT_TRUE(ranked[i - 1].score > ranked[i].score ||
                (ranked[i - 1].score == ranked[i].score && ranked[i - 1].index < ranked[i].index));
  }
  EXPECT_EQ(ranked.front().index, 3);
  for (const auto& s : task.steps) EXPECT_EQ(rank_steps(s.text, task.steps).front().index, s.index);
  EXPECT_THROW(rank_steps(q, {}), std::invalid_argument);
}

TEST(QaContext, BudgetFloorAndGreedyFill) {
  auto task = fixtures::stroganoff();
  const auto floor = count_whitespace_tokens(task.title + " " + task.description) + 8;
  EXPECT_THROW(assemble_context(task, {}, "q", floor - 1), BudgetTooSmall);

  auto full = assemble_context(task, {}, "garlic onions", 10000);
  EXPECT_EQ(full.serialized_text, serialize_task_context(task));
  EXPECT_EQ(full.included_requirements, task.requirements.size());

  std::size_t prev_steps = 0;
  for (std::size_t budget = floor + 4; budget < 200; budget += 7) {
    try {
      auto ctx = assemble_context(task, {}, "How long do the garlic and onions cook?", budget);
      EXPECT_LE(count_whitespace_tokens(ctx.serialized_text), budget);
      EXPECT_TRUE(std::is_sorted(ctx.included_step_indices.begin(), ctx.included_step_indices.end()));
      if (!ctx.included_step_indices.empty()) {
        EXPECT_NE(std::find(ctx.included_step_indices.begin(), ctx.included_step_indices.end(), 3),
                  ctx.included_step_indices.end());
      }
      EXPECT_GE(ctx.included_step_indices.size(), prev_steps);
      prev_steps = ctx.included_step_indices.size();
    } catch (const BudgetTooSmall&) {
    }
  }
}

TEST(QaContext, HistoryWindowIsLastFourTurns) {
  auto task = fixtures::stroganoff();
  std::vector<DialogueLine> history;
  for (int i = 0; i < 6; ++i) history.push_back({i % 2 ? Speaker::kSystem : Speaker::kUser, "turn " + std::to_string(i)});
  auto ctx = assemble_context(task, history, "q", 10000);
  ASSERT_EQ(ctx.history_window.size(), 4u);
  EXPECT_EQ(ctx.history_window.front().text, "turn 2");
  EXPECT_NE(ctx.serialized_text.find("|History:\nUser: turn 2\nSystem: turn 3\nUser: turn 4\nSystem: turn 5"),
            std::string::npos);
  EXPECT_EQ(ctx.serialized_text.find("turn 1"), std::string::npos);
}

TEST(QaTaxonomy, ClassifiesExemplarQuestions) {
  const std::vector<std::pair<const char*, QuestionCategory>> cases = {
      {"Can the almonds be roasted or do they need to be raw?", QuestionCategory::kFactoid},
      {"Once the fill tubing is installed, what step comes next?", QuestionCategory::kNavigation},
      {"Would my kitchen windowsill be a good place for the onions?", QuestionCategory::kConfirmation},
      {"Does that mean basil grows best in the spring and summer?", QuestionCategory::kComplex},
      {"Why shouldn\xE2\x80\x99t I mix in the sour cream at the same time?", QuestionCategory::kCausal},
      {"Sorry, what do I need to do?", QuestionCategory::kHistory},
      {"How much cream cheese and other ingredients will I need?", QuestionCategory::kListing},
  };
  for (const auto& [q, cat] : cases) EXPECT_EQ(classify_question(q), cat) << q;
}

TEST(QaGrounding, AgreesWithNaiveOracle) {
  std::mt19937_64 rng(99);
  const std::string alphabet = "abAB c.";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), hay_len(0, 40), needle_len(0, 4);
  for (int i = 0; i < 1000; ++i) {
    std::string hay, needle;
    for (std::size_t k = 0, n = hay_len(rng); k < n; ++k) hay += alphabet[pick(rng)];
    for (std::size_t k = 0, n = needle_len(rng); k < n; ++k) needle += alphabet[pick(rng)];
    for (bool fold : {false, true}) {
      auto g = ground_span(needle, hay, fold);
      auto exact = naive_find(needle, hay, false);
      auto expected = exact ? exact : (fold ? naive_find(needle, hay, true) : std::nullopt);
      ASSERT_EQ(g.grounded(), expected.has_value()) << "'" << needle << "' in '" << hay << "'";
      if (expected) {
        EXPECT_EQ(g.span->start, *expected);
        EXPECT_EQ(g.span->length, needle.size());
        EXPECT_EQ(g.case_folded, !exact.has_value());
      }
    }
  }
}

TEST(QaGrounding, HallucinatedDurationIsNotGrounded) {
  const auto ctx = serialize_task_context(fixtures::stroganoff());
  EXPECT_FALSE(ground_span("5 minutes", ctx).grounded());
  auto gold = ground_span("cook until golden", ctx);
  ASSERT_TRUE(gold.grounded());
  EXPECT_EQ(ctx.substr(gold.span->start, gold.span->length), "cook until golden");
}

TEST(QaAnswer, ExtractiveAnswerIsSpanChecked) {
  auto task = fixtures::stroganoff();
  const std::string q = "How long are the garlic and onions supposed to cook for?";
  auto grounded = answer_question(task, {}, q, QAMode::kExtractive, ScriptedBackend::of({"Answer: Cook until golden"}));
  auto& a = std::get<QAAnswer>(grounded);
  EXPECT_TRUE(a.grounded);
  EXPECT_TRUE(a.case_folded);
  EXPECT_EQ(a.text, "cook until golden");
  EXPECT_EQ(a.category, QuestionCategory::kFactoid);

  auto halluc = answer_question(task, {}, q, QAMode::kExtractive, ScriptedBackend::of({"5 minutes"}));
  auto& h = std::get<QAAnswer>(halluc);
  EXPECT_FALSE(h.grounded);
  EXPECT_FALSE(h.span);

  auto unknown = answer_question(task, {}, q, QAMode::kExtractive, ScriptedBackend::of({"<unknown>"}));
  EXPECT_FALSE(std::get<QAAnswer>(unknown).grounded);
}

TEST(QaAnswer, AbstractiveAnswerIsGuardedAndTimeoutsReported) {
  auto task = fixtures::stroganoff();
  auto out = answer_question(task, {}, "any tips?", QAMode::kAbstractive,
                             ScriptedBackend::of({"Sure, I can play some jazz while you cook."}));
  auto& a = std::get<QAAnswer>(out);
  EXPECT_FALSE(a.grounded);
  EXPECT_EQ(a.text, "I can't play music, but I can help with cooking and DIY.");

  auto slow = std::make_shared<ScriptedBackend>(
      std::vector<ScriptedBackend::Reply>{{"late", std::chrono::milliseconds(2000), false}});
  QAOptions opts;
  opts.deadline_ms = 100;
  EXPECT_TRUE(std::holds_alternative<QATimeout>(answer_question(task, {}, "q", QAMode::kExtractive, slow, opts)));
}

TEST(QaAnswer, RuleBackendAnswersFromBestStep) {
  auto task = fixtures::stroganoff();
  auto out = answer_question(task, {}, "what do i add to the skillet with the onions and garlic", QAMode::kExtractive,
                             std::make_shared<RuleBackend>());
  auto& a = std::get<QAAnswer>(out);
  EXPECT_TRUE(a.grounded);
  EXPECT_EQ(a.text, "Add onions and garlic to skillet and cook until golden.");
}
