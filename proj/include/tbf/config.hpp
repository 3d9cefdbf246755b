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

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "tbf/orchestrator.hpp"

namespace tbf {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// `rule`, `scripted:<path>` or `remote:<url>`.
struct BackendSpec {
  enum class Kind { kRule, kScripted, kRemote };
  Kind kind = Kind::kRule;
  std::string target;  // path or url

  static BackendSpec parse(const std::string& s) {
    if (s == "rule") return {Kind::kRule, {}};
    if (s.rfind("scripted:", 0) == 0 && s.size() > 9) return {Kind::kScripted, s.substr(9)};
    if (s.rfind("remote:", 0) == 0 && s.size() > 7) return {Kind::kRemote, s.substr(7)};
    throw ConfigError("invalid backend \"" + s + "\" (expected rule, scripted:<path> or remote:<url>)");
  }

  std::string str() const {
    switch (kind) {
      case Kind::kRule: return "rule";
      case Kind::kScripted: return "scripted:" + target;
      case Kind::kRemote: return "remote:" + target;
    }
    return "rule";
  }

  bool operator==(const BackendSpec&) const = default;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string catalog = "data/catalog";
  std::string templates;         // empty: built-in prompts
  std::string capability_rules;  // empty: built-in rules
  std::string action_space;      // empty: built-in action space
  std::map<std::string, BackendSpec> backends = {
      {"ndp", {}}, {"fallback", {}}, {"qa", {}}, {"adaptation", {}}};
  Budgets budgets;
  int idle_eviction_minutes = 30;
  std::string cors_origin = "*";
  std::string log_path;  // empty: no conversation log
  std::string remote_token_env = "TBF_REMOTE_TOKEN";

  bool operator==(const ServerConfig&) const = default;
};

inline nlohmann::json to_json(const ServerConfig& c) {
  nlohmann::json backends = nlohmann::json::object();
  for (const auto& [role, spec] : c.backends) backends[role] = spec.str();
  return {{"host", c.host},
          {"port", c.port},
          {"catalog", c.catalog},
          {"templates", c.templates},
          {"capability_rules", c.capability_rules},
          {"action_space", c.action_space},
          {"backends", backends},
          {"budgets", {{"ndp_ms", c.budgets.ndp_ms}, {"llm_ms", c.budgets.llm_ms}, {"global_ms", c.budgets.global_ms}}},
          {"idle_eviction_minutes", c.idle_eviction_minutes},
          {"cors_origin", c.cors_origin},
          {"log_path", c.log_path},
          {"remote_token_env", c.remote_token_env}};
}

namespace detail {

/// Overrides leaf values from `TBF_<PATH>` variables, where PATH is the
/// upper-cased key path joined by '_' (e.g. TBF_BUDGETS_LLM_MS).
inline void apply_env_overrides(nlohmann::json& node, const std::string& prefix,
                                const std::function<const char*(const char*)>& getenv_fn) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    std::string key = prefix + "_";
    for (char ch : it.key()) key += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (it->is_object()) {
      apply_env_overrides(*it, key, getenv_fn);
      continue;
    }
    const char* v = getenv_fn(key.c_str());
    if (!v) continue;
    if (it->is_number_integer()) {
      try {
        std::size_t used = 0;
        int n = std::stoi(v, &used);
        if (used != std::string(v).size()) throw std::invalid_argument(v);
        *it = n;
      } catch (const std::exception&) {
        throw ConfigError(key + " must be an integer, got \"" + std::string(v) + "\"");
      }
    } else {
      *it = std::string(v);
    }
  }
}

inline std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace detail

/// Builds a config from a JSON document. Missing fields take defaults,
/// environment overrides are applied, relative paths are resolved against
/// `base_dir`, and the result is validated.
inline ServerConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                 const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  nlohmann::json merged = to_json(ServerConfig{});
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!merged.contains(it.key())) throw ConfigError("unknown config key \"" + it.key() + "\"");
  }
  merged.merge_patch(doc);
  detail::apply_env_overrides(merged, "TBF", getenv_fn);

  ServerConfig c;
  try {
    c.host = merged.at("host").get<std::string>();
    c.port = merged.at("port").get<int>();
    c.catalog = detail::resolve(merged.at("catalog").get<std::string>(), base_dir);
    c.templates = detail::resolve(merged.at("templates").get<std::string>(), base_dir);
    c.capability_rules = detail::resolve(merged.at("capability_rules").get<std::string>(), base_dir);
    c.action_space = detail::resolve(merged.at("action_space").get<std::string>(), base_dir);
    c.log_path = detail::resolve(merged.at("log_path").get<std::string>(), base_dir);
    c.cors_origin = merged.at("cors_origin").get<std::string>();
    c.remote_token_env = merged.at("remote_token_env").get<std::string>();
    c.idle_eviction_minutes = merged.at("idle_eviction_minutes").get<int>();
    const auto& b = merged.at("budgets");
    c.budgets = {b.at("ndp_ms").get<int>(), b.at("llm_ms").get<int>(), b.at("global_ms").get<int>()};
    c.backends.clear();
    for (const auto& [role, v] : merged.at("backends").items()) {
      auto spec = BackendSpec::parse(v.get<std::string>());
      if (spec.kind == BackendSpec::Kind::kScripted) spec.target = detail::resolve(spec.target, base_dir);
      c.backends[role] = spec;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config has a field of the wrong type: ") + e.what());
  }

  for (const char* role : {"ndp", "fallback", "qa", "adaptation"}) {
    if (!c.backends.count(role)) throw ConfigError(std::string("missing backend for role ") + role);
  }
  if (c.backends.size() != 4) throw ConfigError("backends must list exactly ndp, fallback, qa and adaptation");
  if (c.port < 0 || c.port > 65535) throw ConfigError("port out of range: " + std::to_string(c.port));
  if (c.budgets.ndp_ms <= 0 || c.budgets.llm_ms <= 0 || c.budgets.global_ms <= 0) {
    throw ConfigError("budgets must be positive");
  }
  if (c.budgets.ndp_ms >= c.budgets.global_ms) throw ConfigError("budgets.ndp_ms must be below budgets.global_ms");
  if (c.idle_eviction_minutes <= 0) throw ConfigError("idle_eviction_minutes must be positive");

  auto must_exist = [](const std::string& p, const char* what) {
    if (!p.empty() && !std::filesystem::exists(p)) throw ConfigError(std::string(what) + " not found: " + p);
  };
  if (c.catalog.empty()) throw ConfigError("catalog path is required");
  must_exist(c.catalog, "catalog");
  must_exist(c.templates, "template directory");
  must_exist(c.capability_rules, "capability rules");
  must_exist(c.action_space, "action space");
  for (const auto& [role, spec] : c.backends) {
    if (spec.kind == BackendSpec::Kind::kScripted) must_exist(spec.target, ("script for " + role).c_str());
  }
  return c;
}

inline ServerConfig load_config(const std::filesystem::path& path,
                                const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
  return parse_config(doc, path.parent_path(), getenv_fn);
}

/// Defaults plus environment overrides, for running without a config file.
inline ServerConfig default_config(const std::filesystem::path& base_dir,
                                   const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  return parse_config(nlohmann::json::object(), base_dir, getenv_fn);
}

}  // namespace tbf
