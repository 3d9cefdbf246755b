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

// Shared fixtures for the test binaries.

#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tbf/orchestrator.hpp"
#include "tbf/taskgraph.hpp"

namespace tbf::fixtures {

inline std::filesystem::path data_dir() { return TBF_DATA_DIR; }
inline std::filesystem::path test_data_dir() { return TBF_TEST_DATA_DIR; }

inline Task catalog_task(const std::string& id) { return load_task_file(data_dir() / "catalog" / (id + ".json")); }

inline Task cucumber_salad() { return catalog_task("food-135"); }
inline Task stroganoff() { return catalog_task("food-59"); }
inline Task salmon() { return catalog_task("food-firecracker-salmon"); }

inline std::vector<Task> catalog() { return load_catalog(data_dir() / "catalog"); }

inline OrchestratorBackends rule_backends() {
  auto rule = std::make_shared<RuleBackend>();
  return {rule, rule, rule, rule};
}

/// Canned JSON for the two adaptation stages.
inline std::string proposal_json(const std::string& original, const std::string& replacement) {
  return R"({"pairs": [{"original": ")" + original + R"(", "replacement": ")" + replacement + R"("}]})";
}

inline std::string edit_json(int step, const std::string& text) {
  nlohmann::json j = {{"step", step}, {"text", text}};
  return j.dump();
}

/// Random printable ASCII plus the characters the DSL has to escape.
inline std::string random_string(std::mt19937_64& rng, std::size_t max_len) {
  static const std::string kExtra = "\"\\\n\t\r(),; ";
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_int_distribution<int> printable(32, 126);
  std::uniform_int_distribution<std::size_t> extra(0, kExtra.size() - 1);
  std::string s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) {
    int p = pick(rng);
    if (p < 7) {
      s += static_cast<char>(printable(rng));
    } else if (p < 9) {
      s += kExtra[extra(rng)];
    } else {
      s += "\xC3\xA9";  // é
    }
  }
  return s;
}

}  // namespace tbf::fixtures
