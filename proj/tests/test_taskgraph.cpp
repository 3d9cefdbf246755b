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

#include <random>
#include <regex>

#include "support.hpp"
#include "tbf/taskgraph.hpp"

using namespace tbf;

namespace {

nlohmann::json minimal_task() {
  return {{"id", "t1"},
          {"title", "Toast"},
          {"description", "Crisp bread."},
          {"domain", "cooking"},
          {"steps", {"Slice the bread.", "Toast the bread until golden."}},
          {"requirements", {{{"name", "bread"}, {"quantity_text", "2 slices"}}}}};
}

// Independent oracle: regex with explicit non-word guards on both sides.
std::vector<int> affected_oracle(const Task& t, const std::string& name) {
  std::string escaped;
  for (char c : name) {
    if (std::string("\\^$.|?*+()[]{}").find(c) != std::string::npos) escaped += '\\';
    escaped += c;
  }
  std::regex re("(^|[^A-Za-z0-9\\x80-\\xff])" + escaped + "([^A-Za-z0-9\\x80-\\xff]|$)", std::regex::icase);
  std::vector<int> out;
  for (const auto& s : t.steps) {
    if (std::regex_search(s.text, re)) out.push_back(s.index);
  }
  return out;
}

}  // namespace

TEST(TaskGraph, LoadsCatalogRecords) {
  auto tasks = fixtures::catalog();
  EXPECT_EQ(tasks.size(), 10u);
  auto salad = fixtures::cucumber_salad();
  EXPECT_EQ(salad.step_count(), 5);
  EXPECT_EQ(salad.requirements.size(), 6u);
  EXPECT_EQ(salad.requirements[1].quantity_text, "2 large");
  EXPECT_EQ(salad.step(3).text, "add cucumbers, radishes, rice vinegar and tamari and toss to combine.");
}

TEST(TaskGraph, JsonRoundTrip) {
  for (const auto& t : fixtures::catalog()) EXPECT_EQ(load_task(to_json(t)), t) << t.id;
}

TEST(TaskGraph, SchemaErrorsNameTheField) {
  auto expect_field = [](nlohmann::json doc, const std::string& field) {
    try {
      load_task(doc);
      ADD_FAILURE() << "accepted invalid record for " << field;
    } catch (const SchemaError& e) {
      EXPECT_EQ(e.field, field);
    }
  };
  auto d = minimal_task();
  d["steps"] = nlohmann::json::array();
  expect_field(d, "steps");
  d = minimal_task();
  d.erase("title");
  expect_field(d, "title");
  d = minimal_task();
  d["domain"] = "gardening";
  expect_field(d, "domain");
  d = minimal_task();
  d["steps"][1] = "   ";
  expect_field(d, "steps[1]");
  d = minimal_task();
  d["requirements"].push_back({{"name", " Bread "}});
  expect_field(d, "requirements[1].name");
}

TEST(TaskGraph, NullOptionalFieldsAreAccepted) {
  auto d = minimal_task();
  d["requirements"][0]["quantity_text"] = nullptr;
  d["source_url"] = nullptr;
  auto t = load_task(d);
  EXPECT_FALSE(t.requirements[0].quantity_text);
  EXPECT_FALSE(t.source_url);
}

TEST(TaskGraph, SearchRanksByQueryCoverage) {
  auto tasks = fixtures::catalog();
  auto hits = search_tasks("spanish recipes", tasks, 3);
  ASSERT_EQ(hits.size(), 3u);
  std::set<std::string> ids;
  for (const auto& h : hits) {
    EXPECT_DOUBLE_EQ(h.score, 1.0);
    ids.insert(h.task.id);
  }
  EXPECT_EQ(ids, (std::set<std::string>{"food-padron", "food-empanadas", "food-tortillas"}));
  EXPECT_THROW(search_tasks("x", tasks, 0), std::invalid_argument);
  EXPECT_EQ(search_tasks("x", {}, 3).size(), 0u);
}

TEST(TaskGraph, SearchIdentityAndMonotonicity) {
  auto tasks = fixtures::catalog();
  for (const auto& t : tasks) {
    EXPECT_DOUBLE_EQ(query_coverage(t.title, t.title + " " + t.description), 1.0);
  }
  // Adding a query token that the document contains never lowers its score.
  const std::string doc = "grilled salmon with peanut oil";
  EXPECT_LE(query_coverage("salmon soup", doc), query_coverage("salmon soup grilled", doc));
}

TEST(TaskGraph, NavigationClampsAtBoundaries) {
  EXPECT_EQ(navigate(2, NavCommand::next(), 5), (NavResult{3, false}));
  EXPECT_EQ(navigate(5, NavCommand::next(), 5), (NavResult{5, true}));
  EXPECT_EQ(navigate(1, NavCommand::previous(), 5), (NavResult{1, true}));
  EXPECT_EQ(navigate(3, NavCommand::repeat(), 5), (NavResult{3, false}));
  EXPECT_EQ(navigate(std::nullopt, NavCommand::go_to(4), 5), (NavResult{4, false}));
  EXPECT_THROW(navigate(1, NavCommand::go_to(6), 5), RangeError);
  EXPECT_THROW(navigate(1, NavCommand::go_to(0), 5), RangeError);
  EXPECT_THROW(navigate(std::nullopt, NavCommand::next(), 5), NotStartedError);
}

TEST(TaskGraph, AffectedStepsMatchesOracle) {
  auto salmon = fixtures::salmon();
  EXPECT_EQ(affected_steps(salmon, "peanut oil"), (std::vector<int>{1, 4}));
  EXPECT_EQ(affected_steps(salmon, "salmon fillets"), (std::vector<int>{2, 4}));

  std::mt19937_64 rng(7);
  const std::vector<std::string> words = {"oil", "egg", "eggs", "peanut", "olive", "salt", "pan", "stir", "the", "a"};
  std::uniform_int_distribution<std::size_t> w(0, words.size() - 1), len(1, 8), nsteps(1, 6), nname(1, 2);
  std::uniform_int_distribution<int> sep(0, 5);
  for (int trial = 0; trial < 300; ++trial) {
    Task t;
    t.id = "x";
    for (int s = 1, n = static_cast<int>(nsteps(rng)); s <= n; ++s) {
      std::string text;
      for (std::size_t k = 0, m = len(rng); k < m; ++k) {
        std::string word = words[w(rng)];
        if (sep(rng) == 0) word[0] = static_cast<char>(std::toupper(word[0]));
        text += word;
        const char* seps[] = {" ", ", ", ". ", "-", "", " "};
        text += seps[sep(rng)];
      }
      t.steps.push_back({s, text});
    }
    std::string name = words[w(rng)];
    if (nname(rng) == 2) name += " " + words[w(rng)];
    ASSERT_EQ(affected_steps(t, name), affected_oracle(t, name)) << name;
  }
}

TEST(TaskGraph, BuildMappingResolvesSpellingAndAffectedSteps) {
  auto salmon = fixtures::salmon();
  auto m = build_mapping(salmon, {{"Peanut Oil ", "olive oil"}});
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].original, "peanut oil");
  EXPECT_EQ(m.affected_steps[0], (std::vector<int>{1, 4}));
  EXPECT_THROW(build_mapping(salmon, {{"butter", "ghee"}}), UnknownRequirement);
  EXPECT_THROW(build_mapping(salmon, {{"peanut oil", "a"}, {"PEANUT OIL", "b"}}), InvalidMapping);
}

TEST(TaskGraph, ApplyReplacementIsPureAndChecksInputs) {
  const auto salmon = fixtures::salmon();
  const auto before = salmon;
  auto m = build_mapping(salmon, {{"peanut oil", "olive oil"}});
  auto out = apply_replacement(salmon, m, {{1, "Whisk the olive oil, soy sauce, brown sugar and red pepper flakes together."}});
  EXPECT_EQ(salmon, before);
  EXPECT_EQ(out.requirements[1].name, "olive oil");
  EXPECT_EQ(out.requirements[1].quantity_text, "2 tablespoons");
  EXPECT_EQ(out.step(1).text, "Whisk the olive oil, soy sauce, brown sugar and red pepper flakes together.");
  EXPECT_EQ(out.step(4), salmon.step(4));

  EXPECT_THROW(apply_replacement(salmon, m, {{2, "x"}}), IndexError);
  auto bad = m;
  bad.affected_steps[0].push_back(9);
  EXPECT_THROW(apply_replacement(salmon, bad, {}), IndexError);
  auto collide = build_mapping(salmon, {{"peanut oil", "soy sauce"}});
  EXPECT_THROW(apply_replacement(salmon, collide, {}), InvalidMapping);
  auto empty = m;
  empty.pairs[0].replacement = " ";
  EXPECT_THROW(apply_replacement(salmon, empty, {}), InvalidMapping);
}
