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

#include <istream>
#include <ostream>
#include <string>

#include "tbf/orchestrator.hpp"

namespace tbf {

/// Terminal dialogue loop over one session. With `debug`, each reply is
/// preceded by the generated action code as `>> code`. Returns when the
/// session ends or input runs out.
inline int run_repl(Orchestrator& orch, std::istream& in, std::ostream& out, bool debug = false) {
  const auto id = orch.create_session();
  out << "Hi! I can help you with cooking and DIY tasks. What would you like to do?\n";
  std::string line;
  while (true) {
    out << "> " << std::flush;
    if (!std::getline(in, line)) {
      out << '\n';
      return 0;
    }
    auto r = orch.handle_utterance(id, line);
    if (debug && !r.action.empty()) out << ">> " << r.action << '\n';
    out << r.text << '\n';
    if (!orch.has_session(id)) return 0;
  }
}

}  // namespace tbf
