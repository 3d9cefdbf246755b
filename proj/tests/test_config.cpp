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
#include "tbf/config.hpp"

using namespace tbf;

namespace {

const char* no_env(const char*) { return nullptr; }

std::function<const char*(const char*)> env(std::map<std::string, std::string> vars) {
  auto shared = std::make_shared<std::map<std::string, std::string>>(std::move(vars));
  return [shared](const char* k) -> const char* {
    auto it = shared->find(k);
    return it == shared->end() ? nullptr : it->second.c_str();
  };
}

std::string error_of(const nlohmann::json& doc, const std::function<const char*(const char*)>& getenv_fn = no_env) {
  try {
    parse_config(doc, fixtures::data_dir().parent_path(), getenv_fn);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, ShippedConfigLoads) {
  auto c = load_config(fixtures::data_dir() / "config.json", no_env);
  EXPECT_EQ(c.catalog, (fixtures::data_dir() / "catalog").lexically_normal().string());
  EXPECT_EQ(c.backends.at("ndp").kind, BackendSpec::Kind::kRule);
  EXPECT_EQ(c.budgets, (Budgets{200, 2000, 4500}));

  auto demo = load_config(fixtures::data_dir() / "config.salmon_demo.json", no_env);
  EXPECT_EQ(demo.backends.at("adaptation").kind, BackendSpec::Kind::kScripted);
  EXPECT_TRUE(std::filesystem::exists(demo.backends.at("adaptation").target));
}

TEST(Config, JsonRoundTrip) {
  auto c = load_config(fixtures::data_dir() / "config.json", no_env);
  c.port = 9191;
  c.budgets.llm_ms = 1800;
  c.cors_origin = "http://localhost:5173";
  auto back = parse_config(to_json(c), "/", no_env);
  EXPECT_EQ(back, c);
}

TEST(Config, EnvironmentOverridesLeaves) {
  auto c = parse_config({{"catalog", "data/catalog"}}, fixtures::data_dir().parent_path(),
                        env({{"TBF_BUDGETS_LLM_MS", "1200"}, {"TBF_PORT", "9000"}, {"TBF_BACKENDS_QA", "rule"},
                             {"TBF_CORS_ORIGIN", "http://example.test"}}));
  EXPECT_EQ(c.budgets.llm_ms, 1200);
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.cors_origin, "http://example.test");
  EXPECT_NE(error_of({{"catalog", "data/catalog"}}, env({{"TBF_PORT", "80x"}})).find("TBF_PORT"), std::string::npos);
}

TEST(Config, ValidationErrorsNameTheProblem) {
  nlohmann::json ok = {{"catalog", "data/catalog"}};
  EXPECT_EQ(error_of(ok), "");

  EXPECT_EQ(error_of({{"catalog", "nowhere/catalog"}}),
            "catalog not found: " + (fixtures::data_dir().parent_path() / "nowhere/catalog").string());
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"budgets", {{"ndp_ms", 4500}}}}).find("ndp_ms"), std::string::npos);
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"budgets", {{"llm_ms", 0}}}}).find("positive"), std::string::npos);
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"backends", {{"qa", "gpt"}}}}).find("invalid backend"),
            std::string::npos);
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"backends", {{"planner", "rule"}}}}).find("exactly"),
            std::string::npos);
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"backends", {{"qa", "scripted:missing.jsonl"}}}})
                .find("script for qa not found"),
            std::string::npos);
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"port", 70000}}).find("port"), std::string::npos);
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"prot", 1}}).find("unknown config key \"prot\""), std::string::npos);
  EXPECT_NE(error_of({{"catalog", "data/catalog"}, {"port", "80"}}).find("wrong type"), std::string::npos);
  EXPECT_NE(error_of(nlohmann::json::array()).find("object"), std::string::npos);
}

TEST(Config, BackendSpecStrings) {
  EXPECT_EQ(BackendSpec::parse("rule").kind, BackendSpec::Kind::kRule);
  auto r = BackendSpec::parse("remote:http://127.0.0.1:9000/generate");
  EXPECT_EQ(r.kind, BackendSpec::Kind::kRemote);
  EXPECT_EQ(r.target, "http://127.0.0.1:9000/generate");
  EXPECT_EQ(BackendSpec::parse(r.str()), r);
  EXPECT_THROW(BackendSpec::parse("scripted:"), ConfigError);
}

TEST(Config, MissingFileIsReported) {
  EXPECT_THROW(load_config("/no/such/config.json", no_env), ConfigError);
}
