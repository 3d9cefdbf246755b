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

#include "tbf/text.hpp"

namespace text = tbf::text;

TEST(Text, TrimAndFold) {
  EXPECT_EQ(text::trim("  a b \n"), "a b");
  EXPECT_EQ(text::trim(""), "");
  EXPECT_EQ(text::fold_key("  Peanut Oil "), "peanut oil");
}

TEST(Text, WordTokensLowercaseAlnumRuns) {
  EXPECT_EQ(text::word_tokens("Don't stir, yet!"), (std::vector<std::string>{"don", "t", "stir", "yet"}));
}

TEST(Text, WholeWordMatchRespectsBoundaries) {
  EXPECT_TRUE(text::contains_whole_word("Heat the peanut oil.", "peanut oil"));
  EXPECT_TRUE(text::contains_whole_word("PEANUT OIL, then", "peanut oil"));
  EXPECT_FALSE(text::contains_whole_word("add eggshells", "egg"));
  EXPECT_FALSE(text::contains_whole_word("add eggs", "egg"));
  EXPECT_TRUE(text::contains_whole_word("egg", "egg"));
  EXPECT_FALSE(text::contains_whole_word("anything", ""));
}

TEST(Text, TruncateNeverSplitsCodePoints) {
  const std::string s = "caf\xC3\xA9s";
  EXPECT_EQ(text::truncate_utf8(s, 4), "caf");
  EXPECT_EQ(text::truncate_utf8(s, 5), "caf\xC3\xA9");
  EXPECT_EQ(text::truncate_utf8(s, 100), s);
}

TEST(Text, WhitespaceTokenCount) {
  EXPECT_EQ(text::whitespace_token_count(" one  two\tthree\n"), 3u);
  EXPECT_EQ(text::whitespace_token_count(""), 0u);
}
