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

#include <cstdlib>
#include <regex>
#include <stdexcept>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "tbf/model_gateway.hpp"

namespace tbf {

/// Text-generation server reached over HTTP. Sends
/// `{"prompt": ..., "max_tokens": ...}` and expects `{"text": ...}` back.
class RemoteBackend final : public Backend {
 public:
  /// `url` is `http://host[:port][/path]`; the bearer token, if any, is read
  /// from `token_env` at construction.
  explicit RemoteBackend(const std::string& url, const std::string& token_env = "TBF_REMOTE_TOKEN") : url_(url) {
    static const std::regex kUrl(R"(^(https?)://([^/:]+)(?::(\d+))?(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, kUrl)) throw std::invalid_argument("invalid backend url: " + url);
    if (m[1] == "https") throw std::invalid_argument("https backends are not supported: " + url);
    host_ = m[2];
    port_ = m[3].matched ? std::stoi(m[3]) : 80;
    path_ = m[4].matched ? std::string(m[4]) : "/generate";
    if (const char* tok = std::getenv(token_env.c_str())) token_ = tok;
  }

  std::string id() const override { return "remote:" + url_; }

  std::string complete(const CompletionCall& call, std::stop_token stop) override {
    httplib::Client cli(host_, port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(call.timeout).count();
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(call.timeout).count() % 1000000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    if (!token_.empty()) cli.set_bearer_token_auth(token_);

    nlohmann::json body = {{"prompt", call.prompt}, {"max_tokens", call.max_output_chars}};
    auto res = cli.Post(path_, body.dump(), "application/json");
    if (stop.stop_requested()) return {};
    if (!res) throw BackendUnavailable("remote backend " + url_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw BackendUnavailable("remote backend " + url_ + " returned HTTP " + std::to_string(res->status));
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw BackendUnavailable("remote backend " + url_ + " returned an unexpected body");
    }
    return j["text"].get<std::string>();
  }

 private:
  std::string url_;
  std::string host_;
  int port_ = 80;
  std::string path_;
  std::string token_;
};

}  // namespace tbf
