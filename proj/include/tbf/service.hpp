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

#include <fstream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "tbf/config.hpp"
#include "tbf/eval.hpp"
#include "tbf/orchestrator.hpp"
#include "tbf/remote_backend.hpp"

namespace tbf {

inline std::shared_ptr<Backend> make_backend(const BackendSpec& spec, const ServerConfig& cfg) {
  switch (spec.kind) {
    case BackendSpec::Kind::kRule: return std::make_shared<RuleBackend>();
    case BackendSpec::Kind::kScripted: return ScriptedBackend::load(spec.target);
    case BackendSpec::Kind::kRemote: return std::make_shared<RemoteBackend>(spec.target, cfg.remote_token_env);
  }
  throw ConfigError("unknown backend kind");
}

/// Loads everything a config refers to. Any missing or malformed input
/// fails here rather than on the first request.
inline std::shared_ptr<Orchestrator> build_orchestrator(const ServerConfig& cfg) {
  auto catalog = load_catalog(cfg.catalog);
  OrchestratorBackends backends{make_backend(cfg.backends.at("ndp"), cfg), make_backend(cfg.backends.at("fallback"), cfg),
                                make_backend(cfg.backends.at("qa"), cfg), make_backend(cfg.backends.at("adaptation"), cfg)};
  OrchestratorOptions opts;
  opts.budgets = cfg.budgets;
  opts.idle_timeout = std::chrono::minutes(cfg.idle_eviction_minutes);
  auto orch = std::make_shared<Orchestrator>(
      std::move(catalog), std::move(backends), opts,
      cfg.action_space.empty() ? ActionSpace::defaults() : ActionSpace::load(cfg.action_space),
      cfg.templates.empty() ? PromptLibrary() : PromptLibrary::load_dir(cfg.templates),
      cfg.capability_rules.empty() ? CapabilityGuard::defaults() : CapabilityGuard::load(cfg.capability_rules));
  if (!cfg.log_path.empty()) {
    auto out = std::make_shared<std::ofstream>(cfg.log_path, std::ios::app);
    if (!*out) throw ConfigError("cannot open log file: " + cfg.log_path);
    orch->set_log_sink([out](const std::string& line) {
      *out << line << '\n';
      out->flush();
    });
  }
  return orch;
}

/// Global counters, recent latency statistics, and the phase-split action
/// distribution.
inline nlohmann::json metrics_json(const Orchestrator& orch, double threshold_ms = 1500.0) {
  auto t = orch.telemetry();
  nlohmann::json latency = nullptr;
  if (!t.latencies_ms.empty()) latency = eval::latency_report(t.latencies_ms, threshold_ms).to_json();
  return {{"turns", t.turns},
          {"sessions", orch.session_count()},
          {"routes",
           {{"in_space", t.routes.in_space}, {"fallback", t.routes.fallback}, {"timeout_default", t.routes.timeout_default}}},
          {"latency", latency},
          {"action_distribution", t.actions.to_json()}};
}

/// HTTP front end. Error bodies are `{"error": {"code", "message"}}` with
/// codes invalid_json, invalid_request, session_not_found, not_found and
/// internal.
class Service {
 public:
  Service(std::shared_ptr<Orchestrator> orch, std::string cors_origin = "*")
      : orch_(std::move(orch)), cors_origin_(std::move(cors_origin)) {
    routes();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Blocks until stop(). Returns false if the port cannot be bound.
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  /// Binds an ephemeral port and returns it, or -1.
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }

  void stop() { server_.stop(); }
  bool running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

  Orchestrator& orchestrator() { return *orch_; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
  }

  void routes() {
    server_.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", cors_origin_);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "unexpected error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send_error(res, 500, "internal", what);
    });
    server_.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty()) {
        if (res.status == 404) {
          send_error(res, 404, "not_found", "no route for " + req.method + " " + req.path);
        } else {
          send_error(res, res.status, "invalid_request", httplib::status_message(res.status));
        }
      }
    });

    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server_.Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, metrics_json(*orch_));
    });

    server_.Post("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 201, {{"session_id", orch_->create_session()}});
    });

    server_.Get(R"(/v1/sessions/([0-9a-zA-Z_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        send_json(res, 200, session_json(orch_->snapshot(req.matches[1])));
      } catch (const SessionNotFound& e) {
        send_error(res, 404, "session_not_found", e.what());
      }
    });

    server_.Post(R"(/v1/sessions/([0-9a-zA-Z_-]+)/utterances)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   auto body = nlohmann::json::parse(req.body, nullptr, false);
                   if (body.is_discarded()) return send_error(res, 400, "invalid_json", "request body is not valid JSON");
                   if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
                     return send_error(res, 400, "invalid_request", "body must be an object with a string \"text\"");
                   }
                   try {
                     auto r = orch_->handle_utterance(req.matches[1], body["text"].get<std::string>());
                     send_json(res, 200, response_json(r));
                   } catch (const SessionNotFound& e) {
                     send_error(res, 404, "session_not_found", e.what());
                   }
                 });
  }

  std::shared_ptr<Orchestrator> orch_;
  std::string cors_origin_;
  httplib::Server server_;
};

}  // namespace tbf
