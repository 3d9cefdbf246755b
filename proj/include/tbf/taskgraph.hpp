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
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tbf/text.hpp"

namespace tbf {

enum class Domain { kCooking, kDiy };

inline std::string_view to_string(Domain d) { return d == Domain::kCooking ? "cooking" : "diy"; }

struct StepNode {
  int index = 0;  // 1-based
  std::string text;

  bool operator==(const StepNode&) const = default;
};

struct Requirement {
  std::string name;
  std::optional<std::string> quantity_text;

  bool operator==(const Requirement&) const = default;
};

/// A task the assistant can guide a user through. Steps are a linear,
/// 1-based list; graph edges between steps are not modelled.
struct Task {
  std::string id;
  std::string title;
  std::string description;
  Domain domain = Domain::kCooking;
  std::vector<StepNode> steps;
  std::vector<Requirement> requirements;
  std::optional<std::string> source_url;

  bool operator==(const Task&) const = default;

  int step_count() const { return static_cast<int>(steps.size()); }
  const StepNode& step(int index) const { return steps.at(static_cast<std::size_t>(index - 1)); }

  const Requirement* find_requirement(std::string_view name) const {
    const auto key = text::fold_key(name);
    for (const auto& r : requirements) {
      if (text::fold_key(r.name) == key) return &r;
    }
    return nullptr;
  }
};

struct SchemaError : std::runtime_error {
  SchemaError(std::string field_name, const std::string& what)
      : std::runtime_error(field_name + ": " + what), field(std::move(field_name)) {}
  std::string field;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end()) throw SchemaError(field, "missing field");
  return *it;
}

inline std::string require_string(const nlohmann::json& doc, const char* field) {
  const auto& v = require_field(doc, field);
  if (!v.is_string()) throw SchemaError(field, "expected string");
  return v.get<std::string>();
}

inline std::optional<std::string> optional_string(const nlohmann::json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw SchemaError(field, "expected string or null");
  return it->get<std::string>();
}

}  // namespace detail

/// Validates one catalog record. Throws SchemaError naming the bad field.
inline Task load_task(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("<root>", "expected object");
  Task t;
  t.id = detail::require_string(doc, "id");
  if (text::trim_view(t.id).empty()) throw SchemaError("id", "must be non-empty");
  t.title = detail::require_string(doc, "title");
  t.description = detail::require_string(doc, "description");

  auto domain = detail::require_string(doc, "domain");
  if (domain == "cooking") {
    t.domain = Domain::kCooking;
  } else if (domain == "diy") {
    t.domain = Domain::kDiy;
  } else {
    throw SchemaError("domain", "expected \"cooking\" or \"diy\", got \"" + domain + "\"");
  }

  const auto& steps = detail::require_field(doc, "steps");
  if (!steps.is_array()) throw SchemaError("steps", "expected array");
  if (steps.empty()) throw SchemaError("steps", "task needs at least one step");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto field = "steps[" + std::to_string(i) + "]";
    if (!steps[i].is_string()) throw SchemaError(field, "expected string");
    auto s = steps[i].get<std::string>();
    if (text::trim_view(s).empty()) throw SchemaError(field, "step text must be non-empty");
    t.steps.push_back({static_cast<int>(i) + 1, std::move(s)});
  }

  const auto& reqs = detail::require_field(doc, "requirements");
  if (!reqs.is_array()) throw SchemaError("requirements", "expected array");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const auto field = "requirements[" + std::to_string(i) + "]";
    if (!reqs[i].is_object()) throw SchemaError(field, "expected object");
    Requirement r;
    try {
      r.name = detail::require_string(reqs[i], "name");
      r.quantity_text = detail::optional_string(reqs[i], "quantity_text");
    } catch (const SchemaError& e) {
      throw SchemaError(field + "." + e.field, e.what());
    }
    if (text::trim_view(r.name).empty()) throw SchemaError(field + ".name", "must be non-empty");
    if (!seen.insert(text::fold_key(r.name)).second) {
      throw SchemaError(field + ".name", "duplicate requirement \"" + r.name + "\"");
    }
    t.requirements.push_back(std::move(r));
  }
  t.source_url = detail::optional_string(doc, "source_url");
  return t;
}

inline nlohmann::json to_json(const Task& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) steps.push_back(s.text);
  nlohmann::json reqs = nlohmann::json::array();
  for (const auto& r : t.requirements) {
    reqs.push_back({{"name", r.name},
                    {"quantity_text", r.quantity_text ? nlohmann::json(*r.quantity_text) : nullptr}});
  }
  return {{"id", t.id},
          {"title", t.title},
          {"description", t.description},
          {"domain", std::string(to_string(t.domain))},
          {"steps", std::move(steps)},
          {"requirements", std::move(reqs)},
          {"source_url", t.source_url ? nlohmann::json(*t.source_url) : nullptr}};
}

inline Task load_task_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("<file>", "cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<file>", path.string() + ": " + e.what());
  }
  try {
    return load_task(doc);
  } catch (const SchemaError& e) {
    throw SchemaError(e.field, path.string() + ": " + e.what());
  }
}

/// Loads every `*.json` file in `dir`, sorted by file name so catalog order
/// is stable across platforms.
inline std::vector<Task> load_catalog(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw SchemaError("<catalog>", "not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Task> out;
  std::set<std::string> ids;
  for (const auto& f : files) {
    auto t = load_task_file(f);
    if (!ids.insert(t.id).second) throw SchemaError("id", f.string() + ": duplicate task id " + t.id);
    out.push_back(std::move(t));
  }
  return out;
}

/// Fraction of distinct query word tokens that also occur in `document`.
/// Returns 0 for a query without word tokens.
inline double query_coverage(std::string_view query, std::string_view document) {
  auto q = text::word_tokens(query);
  std::set<std::string> qset(q.begin(), q.end());
  if (qset.empty()) return 0.0;
  auto d = text::word_tokens(document);
  std::set<std::string> dset(d.begin(), d.end());
  std::size_t hits = 0;
  for (const auto& tok : qset) hits += dset.count(tok);
  return static_cast<double>(hits) / static_cast<double>(qset.size());
}

struct ScoredTask {
  Task task;
  double score = 0.0;
};

/// Lexical top-k over title + description; stable for ties.
inline std::vector<ScoredTask> search_tasks(std::string_view query, const std::vector<Task>& catalog,
                                            int k) {
  if (k < 1) throw std::invalid_argument("search_tasks: k must be >= 1");
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    scored.emplace_back(query_coverage(query, catalog[i].title + " " + catalog[i].description), i);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<ScoredTask> out;
  for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < k; ++i) {
    out.push_back({catalog[scored[i].second], scored[i].first});
  }
  return out;
}

struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct NotStartedError : std::logic_error {
  using std::logic_error::logic_error;
};

struct NavCommand {
  enum class Kind { kNext, kPrevious, kRepeat, kGoto };
  Kind kind = Kind::kNext;
  int target = 0;  // only for kGoto

  static NavCommand next() { return {Kind::kNext, 0}; }
  static NavCommand previous() { return {Kind::kPrevious, 0}; }
  static NavCommand repeat() { return {Kind::kRepeat, 0}; }
  static NavCommand go_to(int n) { return {Kind::kGoto, n}; }
};

struct NavResult {
  int index = 1;
  bool at_boundary = false;

  bool operator==(const NavResult&) const = default;
};

inline NavResult navigate(std::optional<int> current, NavCommand cmd, int n_steps) {
  if (n_steps < 1) throw std::invalid_argument("navigate: task has no steps");
  if (cmd.kind == NavCommand::Kind::kGoto) {
    if (cmd.target < 1 || cmd.target > n_steps) {
      throw RangeError("step " + std::to_string(cmd.target) + " is outside 1.." +
                       std::to_string(n_steps));
    }
    return {cmd.target, false};
  }
  if (!current) throw NotStartedError("task has not been started");
  if (*current < 1 || *current > n_steps) {
    throw RangeError("current step " + std::to_string(*current) + " is outside 1.." +
                     std::to_string(n_steps));
  }
  switch (cmd.kind) {
    case NavCommand::Kind::kNext:
      if (*current == n_steps) return {n_steps, true};
      return {*current + 1, false};
    case NavCommand::Kind::kPrevious:
      if (*current == 1) return {1, true};
      return {*current - 1, false};
    default:
      return {*current, false};
  }
}

/// Ascending indices of steps mentioning `requirement_name` as a whole word
/// or phrase, case-insensitively.
inline std::vector<int> affected_steps(const Task& task, std::string_view requirement_name) {
  std::vector<int> out;
  auto name = text::trim_view(requirement_name);
  if (name.empty()) return out;
  for (const auto& s : task.steps) {
    if (text::contains_whole_word(s.text, name)) out.push_back(s.index);
  }
  return out;
}

struct ReplacementPair {
  std::string original;
  std::string replacement;

  bool operator==(const ReplacementPair&) const = default;
};

struct ReplacementMapping {
  std::vector<ReplacementPair> pairs;
  std::vector<std::vector<int>> affected_steps;  // parallel to pairs

  bool operator==(const ReplacementMapping&) const = default;

  std::set<int> all_affected() const {
    std::set<int> out;
    for (const auto& v : affected_steps) out.insert(v.begin(), v.end());
    return out;
  }
};

struct UnknownRequirement : std::invalid_argument {
  explicit UnknownRequirement(const std::string& name)
      : std::invalid_argument("unknown requirement: " + name), requirement(name) {}
  std::string requirement;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct InvalidMapping : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Builds a mapping for `task`, resolving originals to the task's spelling
/// of the requirement and computing the steps each pair touches.
inline ReplacementMapping build_mapping(const Task& task, const std::vector<ReplacementPair>& pairs) {
  ReplacementMapping m;
  std::set<std::string> originals;
  for (const auto& p : pairs) {
    const Requirement* r = task.find_requirement(p.original);
    if (r == nullptr) throw UnknownRequirement(p.original);
    if (!originals.insert(text::fold_key(r->name)).second) {
      throw InvalidMapping("duplicate original: " + r->name);
    }
    m.pairs.push_back({r->name, text::trim(p.replacement)});
    m.affected_steps.push_back(affected_steps(task, r->name));
  }
  return m;
}

/// Returns a copy of `task` with each original requirement renamed to its
/// replacement in place and the given steps rewritten. `task` is untouched.
inline Task apply_replacement(const Task& task, const ReplacementMapping& mapping,
                              const std::map<int, std::string>& rewritten_steps) {
  if (mapping.affected_steps.size() != mapping.pairs.size()) {
    throw InvalidMapping("affected_steps must parallel pairs");
  }
  std::set<std::string> originals;
  for (const auto& p : mapping.pairs) {
    if (task.find_requirement(p.original) == nullptr) throw UnknownRequirement(p.original);
    if (!originals.insert(text::fold_key(p.original)).second) {
      throw InvalidMapping("duplicate original: " + p.original);
    }
    if (text::trim_view(p.replacement).empty()) {
      throw InvalidMapping("empty replacement for " + p.original);
    }
  }
  // A replacement may not reintroduce an original or collide with a kept
  // requirement; either would break name uniqueness.
  std::set<std::string> result_names;
  for (const auto& r : task.requirements) {
    if (!originals.count(text::fold_key(r.name))) result_names.insert(text::fold_key(r.name));
  }
  for (const auto& p : mapping.pairs) {
    auto key = text::fold_key(p.replacement);
    if (originals.count(key)) throw InvalidMapping("replacement reuses an original: " + p.replacement);
    if (!result_names.insert(key).second) {
      throw InvalidMapping("replacement duplicates a requirement: " + p.replacement);
    }
  }
  for (const auto& steps : mapping.affected_steps) {
    for (int i : steps) {
      if (i < 1 || i > task.step_count()) {
        throw IndexError("affected step " + std::to_string(i) + " is out of range");
      }
    }
  }
  const auto allowed = mapping.all_affected();
  for (const auto& [index, _] : rewritten_steps) {
    if (!allowed.count(index)) {
      throw IndexError("step " + std::to_string(index) + " is not affected by the mapping");
    }
  }

  Task out = task;
  for (auto& r : out.requirements) {
    for (const auto& p : mapping.pairs) {
      if (text::fold_key(r.name) == text::fold_key(p.original)) {
        r.name = p.replacement;
        break;
      }
    }
  }
  for (const auto& [index, new_text] : rewritten_steps) {
    out.steps[static_cast<std::size_t>(index - 1)].text = new_text;
  }
  return out;
}

}  // namespace tbf
