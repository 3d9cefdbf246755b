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

// tbf: serve, repl, eval ndp, eval qa, wote build.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "CLI11.hpp"
#include "tbf/config.hpp"
#include "tbf/eval.hpp"
#include "tbf/repl.hpp"
#include "tbf/service.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_input(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("input not found: " + path);
}

tbf::ServerConfig config_from(const std::string& path) {
  if (path.empty()) return tbf::default_config(fs::current_path());
  return tbf::load_config(path);
}

void write_report(const nlohmann::json& report, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << report.dump(2) << '\n';
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << report.dump(2) << '\n';
}

std::string first_string(const nlohmann::json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (j.contains(k) && j[k].is_string()) return j[k].get<std::string>();
  }
  throw tbf::SchemaError(*keys.begin(), "missing string field");
}

/// Pairs gold and prediction lines by "id", or by line order when ids are absent.
std::vector<tbf::eval::NDPEvalRecord> load_ndp_records(const std::string& pred_path, const std::string& gold_path) {
  auto gold = tbf::eval::read_jsonl(gold_path);
  auto pred = tbf::eval::read_jsonl(pred_path);
  std::map<std::string, nlohmann::json> pred_by_id;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred_by_id[pred[i].value("id", std::to_string(i))] = pred[i];
  }
  std::vector<tbf::eval::NDPEvalRecord> out;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& g = gold[i];
    tbf::eval::NDPEvalRecord r;
    r.id = g.value("id", std::to_string(i));
    r.gold_action = first_string(g, {"gold_action", "action"});
    r.utterance = g.value("utterance", "");
    if (g.contains("context") && g["context"].is_array()) {
      for (const auto& c : g["context"]) {
        if (c.is_string()) r.context.push_back(c.get<std::string>());
      }
    }
    auto it = pred_by_id.find(r.id);
    if (it == pred_by_id.end()) throw tbf::SchemaError("id", "no prediction for record " + r.id);
    r.predicted_action = first_string(it->second, {"predicted_action", "action"});
    r.latency_ms = it->second.value("latency_ms", 0.0);
    out.push_back(std::move(r));
  }
  return out;
}

int cmd_serve(const std::string& config_path) {
  auto cfg = config_from(config_path);
  auto orch = tbf::build_orchestrator(cfg);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  tbf::Service service(orch, cfg.cors_origin);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  std::cerr << "listening on " << cfg.host << ":" << cfg.port << '\n';
  bool ok = service.listen(cfg.host, cfg.port);
  if (!ok) {
    std::cerr << "error: cannot bind " << cfg.host << ":" << cfg.port << '\n';
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task assistant dialogue service and evaluation tools"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("-c,--config", config_path, "Config file (JSON)");

  bool debug = false;
  auto* repl = app.add_subcommand("repl", "Chat in the terminal");
  repl->add_option("-c,--config", config_path, "Config file (JSON)");
  repl->add_flag("--debug", debug, "Print action codes");

  auto* eval = app.add_subcommand("eval", "Compute evaluation metrics");
  eval->require_subcommand(1);
  std::string pred_path, gold_path, out_path;
  auto* eval_ndp = eval->add_subcommand("ndp", "Decision parser accuracy, P/R/F1, parsability");
  eval_ndp->add_option("--pred", pred_path, "Predictions (JSON lines)")->required();
  eval_ndp->add_option("--gold", gold_path, "Gold actions (JSON lines)")->required();
  eval_ndp->add_option("--out", out_path, "Report path (default: stdout)");
  auto* eval_qa = eval->add_subcommand("qa", "Exact match, token F1 and ROUGE-1 against WoTe spans");
  eval_qa->add_option("--pred", pred_path, "Predictions {id, answer} (JSON lines)")->required();
  eval_qa->add_option("--gold", gold_path, "WoTe records (JSON lines)")->required();
  eval_qa->add_option("--out", out_path, "Report path (default: stdout)");

  auto* wote = app.add_subcommand("wote", "WoTe dataset tools");
  wote->require_subcommand(1);
  std::string input_path, report_path;
  bool either_label = false;
  auto* wote_build = wote->add_subcommand("build", "Filter WoT-style records and annotate spans");
  wote_build->add_option("--input", input_path, "JSON lines file or directory of them")->required();
  wote_build->add_option("--out", out_path, "Output WoTe records (JSON lines)")->required();
  wote_build->add_option("--report", report_path, "Stage report path (default: stdout)");
  wote_build->add_flag("--relevant-or-useful", either_label, "Keep records labelled relevant or useful");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*serve) return cmd_serve(config_path);

    if (*repl) {
      auto orch = tbf::build_orchestrator(config_from(config_path));
      return tbf::run_repl(*orch, std::cin, std::cout, debug);
    }

    if (*eval_ndp) {
      require_input(pred_path);
      require_input(gold_path);
      auto report = tbf::eval::eval_ndp(load_ndp_records(pred_path, gold_path));
      write_report(report.to_json(), out_path);
      return 0;
    }

    if (*eval_qa) {
      require_input(pred_path);
      require_input(gold_path);
      std::vector<tbf::eval::WoTeRecord> gold;
      for (const auto& j : tbf::eval::read_jsonl(gold_path)) gold.push_back(tbf::eval::wote_from_json(j));
      std::vector<tbf::eval::QAPrediction> preds;
      for (const auto& j : tbf::eval::read_jsonl(pred_path)) {
        preds.push_back({first_string(j, {"id"}), first_string(j, {"answer", "text"})});
      }
      write_report(tbf::eval::eval_qa(gold, preds).to_json(), out_path);
      return 0;
    }

    if (*wote_build) {
      require_input(input_path);
      tbf::eval::WoteOptions opts;
      opts.require_relevant_and_useful = !either_label;
      auto built = tbf::eval::build_wote(tbf::eval::read_jsonl_input(input_path), opts);
      std::ofstream out(out_path);
      if (!out) throw std::runtime_error("cannot write " + out_path);
      for (const auto& r : built.records) out << tbf::eval::to_json(r).dump() << '\n';
      write_report(built.report.to_json(), report_path);
      for (const auto& e : built.report.errors) {
        std::cerr << "record " << e.index << (e.id.empty() ? "" : " (" + e.id + ")") << ": " << e.error << '\n';
      }
      return built.report.errors.empty() ? 0 : kExitData;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const tbf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
