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

#include "support.hpp"
#include "tbf/prompts.hpp"

using namespace tbf;

TEST(Prompts, ShippedTemplateFilesMatchBuiltins) {
  auto lib = PromptLibrary::load_dir(fixtures::data_dir() / "templates");
  for (auto id : kAllTemplates) EXPECT_EQ(lib.text(id), templates::builtin(id)) << to_string(id);
}

TEST(Prompts, PlaceholderSets) {
  EXPECT_EQ(template_placeholders(templates::kFallback),
            (std::set<std::string>{"last_system_response", "user_utterance"}));
  EXPECT_EQ(template_placeholders(templates::kQa),
            (std::set<std::string>{"Description", "Steps", "Ingredients", "Question"}));
  EXPECT_EQ(template_placeholders(templates::kReplacementProposal),
            (std::set<std::string>{"title", "requirements", "request"}));
  EXPECT_EQ(template_placeholders(templates::kTaskRewrite),
            (std::set<std::string>{"title", "replacements", "step_index", "step_text"}));
  EXPECT_EQ(template_placeholders(templates::kNdp),
            (std::set<std::string>{"actions", "phase", "task_title", "current_step", "history",
                                   "last_system_response", "user_utterance"}));
}

TEST(Prompts, FallbackRendersExpectedFrame) {
  auto out = render_prompt(TemplateId::kFallback, {{"last_system_response", "Step 1: slice."}, {"user_utterance", "play jazz"}});
  EXPECT_NE(out.find("You: Step 1: slice.\n\nHuman: play jazz\n\n### Response: Your response:"), std::string::npos);
  EXPECT_TRUE(out.starts_with("### Instruction:\n"));
}

TEST(Prompts, QaEndsWithAnswerCue) {
  auto out = render_prompt(TemplateId::kQa, {{"Description", "D"}, {"Steps", "S"}, {"Ingredients", "I"}, {"Question", "Q?"}});
  EXPECT_TRUE(out.ends_with("Question: Q? [/INST] Answer:"));
  EXPECT_NE(out.find("Context: D S I"), std::string::npos);
}

TEST(Prompts, MissingVariableIsNamed) {
  try {
    render_prompt(TemplateId::kFallback, {{"user_utterance", "hi"}});
    FAIL() << "expected MissingVariable";
  } catch (const MissingVariable& e) {
    EXPECT_EQ(e.name, "last_system_response");
  }
}

TEST(Prompts, SubstitutionIsSinglePassAndBracesAreLiteral) {
  EXPECT_EQ(render_template("{a} {b}", {{"a", "{b}"}, {"b", "x"}}), "{b} x");
  EXPECT_EQ(render_template(R"({"k": {v}} {1} { x })", {{"v", "1"}}), R"({"k": 1} {1} { x })");
}

TEST(Prompts, LoadDirRejectsMissingDirectory) {
  EXPECT_THROW(PromptLibrary::load_dir(fixtures::test_data_dir() / "no-such-dir"), std::runtime_error);
}
