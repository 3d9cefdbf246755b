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
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tbf/action_dsl.hpp"
#include "tbf/qa_pipeline.hpp"
#include "tbf/taskgraph.hpp"
#include "tbf/text.hpp"

namespace tbf::eval {

// ---------------------------------------------------------------------------
// Answer metrics

inline bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

/// SQuAD answer normalization: lowercase, drop ASCII punctuation, drop the
/// articles a/an/the, split on whitespace.
inline std::vector<std::string> normalize(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    if (!is_ascii_punct(static_cast<unsigned char>(c))) cleaned += text::lower_char(c);
  }
  std::vector<std::string> out;
  for (auto& tok : text::split_whitespace(cleaned)) {
    if (tok != "a" && tok != "an" && tok != "the") out.push_back(std::move(tok));
  }
  return out;
}

namespace detail {

inline std::size_t multiset_overlap(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::string_view, int> counts;
  for (const auto& t : b) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : a) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return common;
}

inline double unigram_f(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return pred.empty() && gold.empty() ? 1.0 : 0.0;
  auto common = static_cast<double>(multiset_overlap(pred, gold));
  if (common == 0.0) return 0.0;
  double p = common / static_cast<double>(pred.size());
  double r = common / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace detail

inline double exact_match(std::string_view pred, std::string_view gold) {
  return normalize(pred) == normalize(gold) ? 1.0 : 0.0;
}

inline double token_f1(std::string_view pred, std::string_view gold) {
  return detail::unigram_f(normalize(pred), normalize(gold));
}

/// Unigram F-measure over lowercased whitespace tokens. Articles and
/// punctuation are kept.
inline double rouge1(std::string_view pred, std::string_view gold) {
  return detail::unigram_f(text::split_whitespace(text::to_lower(pred)),
                           text::split_whitespace(text::to_lower(gold)));
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  std::map<std::string, double> scores;  // each in [0, 1]
  std::map<std::string, std::uint64_t> counts;
  std::map<std::string, double> stats;  // unbounded values such as latency
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j = {{"scores", scores}, {"counts", counts}};
    if (!stats.empty()) j["stats"] = stats;
    if (!details.empty()) j["details"] = details;
    return j;
  }
};

struct LatencyReport {
  std::size_t n = 0;
  double mean = 0, p50 = 0, p95 = 0, fraction_under = 0, threshold_ms = 0;

  nlohmann::json to_json() const {
    return {{"n", n}, {"mean", mean}, {"p50", p50}, {"p95", p95}, {"fraction_under", fraction_under},
            {"threshold_ms", threshold_ms}};
  }
};

/// Nearest-rank percentile of sorted samples; p in (0, 100].
inline double percentile(const std::vector<double>& sorted, double p) {
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline LatencyReport latency_report(std::vector<double> samples_ms, double threshold_ms) {
  if (samples_ms.empty()) throw std::invalid_argument("latency_report: no samples");
  std::sort(samples_ms.begin(), samples_ms.end());
  LatencyReport r;
  r.n = samples_ms.size();
  r.threshold_ms = threshold_ms;
  r.mean = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(r.n);
  r.p50 = percentile(samples_ms, 50);
  r.p95 = percentile(samples_ms, 95);
  auto under = std::count_if(samples_ms.begin(), samples_ms.end(), [&](double s) { return s < threshold_ms; });
  r.fraction_under = static_cast<double>(under) / static_cast<double>(r.n);
  return r;
}

// ---------------------------------------------------------------------------
// Dataset splits

struct SplitRatios {
  double train = 0.6, validation = 0.1, test = 0.3;
};

template <typename T>
struct Splits {
  std::vector<T> train, validation, test;
};

/// Seeded shuffle then cut. The first two parts are floored; the test part
/// takes the remainder.
template <typename T>
Splits<T> split_records(std::vector<T> records, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(records.begin(), records.end(), rng);
  const auto n = static_cast<double>(records.size());
  auto n_train = static_cast<std::size_t>(std::floor(ratios.train * n));
  auto n_val = static_cast<std::size_t>(std::floor(ratios.validation * n));
  Splits<T> out;
  auto it = std::make_move_iterator(records.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(it + static_cast<std::ptrdiff_t>(n_train),
                        it + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val), std::make_move_iterator(records.end()));
  return out;
}

// ---------------------------------------------------------------------------
// Decision parser evaluation

struct NDPEvalRecord {
  std::string id;
  std::vector<std::string> context;
  std::string utterance;
  std::string gold_action;
  std::string predicted_action;
  double latency_ms = 0.0;
};

struct GoldParseError : std::invalid_argument {
  explicit GoldParseError(std::vector<std::string> record_ids)
      : std::invalid_argument("gold action does not parse for: " + text::join(record_ids, ", ")),
        ids(std::move(record_ids)) {}
  std::vector<std::string> ids;
};

inline constexpr std::string_view kUnparseableLabel = "<unparseable>";

struct ClassScores {
  double precision = 0, recall = 0, f1 = 0;
  std::uint64_t support = 0;
};

/// Macro precision/recall/F1 over the union of gold and predicted labels.
/// Undefined ratios count as 0.
inline std::map<std::string, ClassScores> per_class_scores(const std::vector<std::string>& gold,
                                                           const std::vector<std::string>& pred) {
  if (gold.size() != pred.size()) throw std::invalid_argument("per_class_scores: size mismatch");
  std::map<std::string, std::array<std::uint64_t, 3>> tally;  // tp, fp, fn
  for (std::size_t i = 0; i < gold.size(); ++i) {
    tally[gold[i]];
    tally[pred[i]];
    if (gold[i] == pred[i]) {
      ++tally[gold[i]][0];
    } else {
      ++tally[pred[i]][1];
      ++tally[gold[i]][2];
    }
  }
  std::map<std::string, ClassScores> out;
  for (const auto& [label, t] : tally) {
    ClassScores c;
    c.support = t[0] + t[2];
    if (t[0] + t[1] > 0) c.precision = static_cast<double>(t[0]) / static_cast<double>(t[0] + t[1]);
    if (t[0] + t[2] > 0) c.recall = static_cast<double>(t[0]) / static_cast<double>(t[0] + t[2]);
    if (c.precision + c.recall > 0) c.f1 = 2 * c.precision * c.recall / (c.precision + c.recall);
    out[label] = c;
  }
  return out;
}

inline MetricsReport eval_ndp(const std::vector<NDPEvalRecord>& records,
                              const ActionSpace& space = ActionSpace::defaults()) {
  if (records.empty()) throw std::invalid_argument("eval_ndp: no records");
  std::vector<std::string> bad;
  std::vector<ActionCode> golds;
  for (const auto& r : records) {
    auto g = parse_action(r.gold_action);
    if (!g) {
      bad.push_back(r.id);
    } else {
      golds.push_back(g.action());
    }
  }
  if (!bad.empty()) throw GoldParseError(bad);

  std::vector<std::string> gold_labels, pred_labels;
  std::uint64_t correct = 0, parsable = 0;
  double latency = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto p = parse_action(records[i].predicted_action);
    gold_labels.push_back(golds[i].name);
    if (p) {
      pred_labels.push_back(p.action().name);
      if (render_action(p.action()) == render_action(golds[i])) ++correct;
      if (is_in_space(validate_action(p.action(), space))) ++parsable;
    } else {
      pred_labels.emplace_back(kUnparseableLabel);
    }
    latency += records[i].latency_ms;
  }

  auto classes = per_class_scores(gold_labels, pred_labels);
  double mp = 0, mr = 0, mf = 0;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [label, c] : classes) {
    mp += c.precision;
    mr += c.recall;
    mf += c.f1;
    per_class[label] = {{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
  }
  const auto n = static_cast<double>(records.size());
  const auto k = static_cast<double>(classes.size());

  MetricsReport rep;
  rep.scores = {{"accuracy", static_cast<double>(correct) / n},
                {"precision", mp / k},
                {"recall", mr / k},
                {"f1", mf / k},
                {"parsability", static_cast<double>(parsable) / n}};
  rep.counts = {{"records", records.size()}, {"correct", correct}, {"parsable", parsable}};
  rep.stats = {{"mean_latency_ms", latency / n}};
  rep.details["per_class"] = per_class;
  return rep;
}

// ---------------------------------------------------------------------------
// Extractive QA evaluation

struct AnswerSpan {
  std::string text;
  std::size_t start = 0;

  bool operator==(const AnswerSpan&) const = default;
};

struct WoTeRecord {
  std::string id;
  Domain domain = Domain::kCooking;
  std::string question;
  AnswerSpan answer;
  QuestionCategory category = QuestionCategory::kFactoid;
  Task task;
  std::vector<DialogueLine> history;
};

inline nlohmann::json to_json(const WoTeRecord& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : r.history) hist.push_back({{"speaker", std::string(to_string(h.speaker))}, {"text", h.text}});
  return {{"id", r.id},
          {"domain", std::string(to_string(r.domain))},
          {"question", r.question},
          {"answer", {{"text", r.answer.text}, {"start", r.answer.start}}},
          {"category", std::string(to_string(r.category))},
          {"task", tbf::to_json(r.task)},
          {"history", hist}};
}

namespace detail {

inline std::vector<DialogueLine> parse_history(const nlohmann::json& j) {
  std::vector<DialogueLine> out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw SchemaError("history", "must be an array");
  for (const auto& h : j) {
    if (!h.is_object() || !h.contains("text") || !h["text"].is_string()) {
      throw SchemaError("history", "entries need a text string");
    }
    Speaker s = h.value("speaker", "user") == "system" ? Speaker::kSystem : Speaker::kUser;
    out.push_back({s, h["text"].get<std::string>()});
  }
  return out;
}

}  // namespace detail

/// Reads a WoTe record and checks the span against the serialized task.
inline WoTeRecord wote_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("record", "must be an object");
  WoTeRecord r;
  r.id = tbf::detail::require_string(j, "id");
  r.question = tbf::detail::require_string(j, "question");
  r.task = load_task(tbf::detail::require_field(j, "task"));
  r.domain = r.task.domain;
  const auto& a = tbf::detail::require_field(j, "answer");
  if (!a.is_object() || !a.contains("text") || !a["text"].is_string() || !a.contains("start") ||
      !a["start"].is_number_unsigned()) {
    throw SchemaError("answer", "needs text and a non-negative integer start");
  }
  r.answer = {a["text"].get<std::string>(), a["start"].get<std::size_t>()};
  auto cat = parse_category(tbf::detail::require_string(j, "category"));
  if (!cat) throw SchemaError("category", "not a known question category");
  r.category = *cat;
  if (j.contains("history")) r.history = detail::parse_history(j["history"]);
  auto ctx = serialize_task_context(r.task);
  if (r.answer.start > ctx.size() || ctx.compare(r.answer.start, r.answer.text.size(), r.answer.text) != 0) {
    throw SchemaError("answer", "span text does not match the task context at start");
  }
  return r;
}

struct QAPrediction {
  std::string id;
  std::string answer;
};

inline MetricsReport eval_qa(const std::vector<WoTeRecord>& gold, const std::vector<QAPrediction>& preds) {
  if (gold.empty()) throw std::invalid_argument("eval_qa: no gold records");
  std::map<std::string, std::string> by_id;
  for (const auto& p : preds) by_id[p.id] = p.answer;
  double em = 0, f1 = 0, rg = 0;
  std::uint64_t missing = 0;
  std::map<std::string, std::array<double, 4>> per_cat;  // em, f1, rouge1, n
  for (const auto& g : gold) {
    auto it = by_id.find(g.id);
    std::string pred = it == by_id.end() ? std::string() : it->second;
    if (it == by_id.end()) ++missing;
    double e = exact_match(pred, g.answer.text), f = token_f1(pred, g.answer.text), r = rouge1(pred, g.answer.text);
    em += e;
    f1 += f;
    rg += r;
    auto& c = per_cat[std::string(to_string(g.category))];
    c[0] += e;
    c[1] += f;
    c[2] += r;
    c[3] += 1;
  }
  const auto n = static_cast<double>(gold.size());
  MetricsReport rep;
  rep.scores = {{"exact_match", em / n}, {"f1", f1 / n}, {"rouge1", rg / n}};
  rep.counts = {{"records", gold.size()}, {"missing_predictions", missing}};
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [name, c] : per_cat) {
    cats[name] = {{"exact_match", c[0] / c[3]}, {"f1", c[1] / c[3]}, {"rouge1", c[2] / c[3]},
                  {"records", static_cast<std::uint64_t>(c[3])}};
  }
  rep.details["per_category"] = cats;
  return rep;
}

// ---------------------------------------------------------------------------
// WoTe construction
//
// Input records (one JSON object each):
//   id                  string
//   question            string
//   is_question         bool    utterance annotated as a question
//   answerable          bool    answerable from the task content
//   relevant, useful    bool    crowd labels
//   external_knowledge  bool    needs common or outside knowledge
//   task                object  scraped task content, or null when scraping failed
//   answer              {text, start?}   required for records that reach the end
//   category            string  optional; classified from the question when absent
//   history             [{speaker, text}] optional

struct WoteOptions {
  /// When false, a record is dropped only if it is both irrelevant and not useful.
  bool require_relevant_and_useful = true;
};

inline constexpr std::array<std::string_view, 5> kWoteStages = {
    "questions", "answerable", "relevant_useful", "content_scraped", "no_external_knowledge"};

struct RecordError {
  std::size_t index = 0;
  std::string id;
  std::string error;
};

struct WoteReport {
  std::size_t input = 0;
  std::array<std::size_t, 5> stage_counts{};
  std::size_t output = 0;
  std::vector<RecordError> errors;

  nlohmann::json to_json() const {
    nlohmann::json stages = nlohmann::json::array();
    for (std::size_t i = 0; i < kWoteStages.size(); ++i) {
      stages.push_back({{"stage", kWoteStages[i]}, {"count", stage_counts[i]}});
    }
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& e : errors) errs.push_back({{"index", e.index}, {"id", e.id}, {"error", e.error}});
    return {{"input", input}, {"stages", stages}, {"output", output}, {"errors", errs}};
  }
};

struct WoteBuild {
  std::vector<WoTeRecord> records;
  WoteReport report;
};

namespace detail {

inline bool require_bool(const nlohmann::json& j, const char* field) {
  const auto& v = tbf::detail::require_field(j, field);
  if (!v.is_boolean()) throw SchemaError(field, "must be a boolean");
  return v.get<bool>();
}

/// Span annotation: verify a given start, or take the first occurrence.
inline AnswerSpan annotate_span(const nlohmann::json& answer, const std::string& context) {
  if (!answer.is_object() || !answer.contains("text") || !answer["text"].is_string()) {
    throw SchemaError("answer", "needs a text string");
  }
  AnswerSpan span{answer["text"].get<std::string>(), 0};
  if (span.text.empty()) throw SchemaError("answer", "text must not be empty");
  if (answer.contains("start") && !answer["start"].is_null()) {
    if (!answer["start"].is_number_unsigned()) throw SchemaError("answer.start", "must be a non-negative integer");
    span.start = answer["start"].get<std::size_t>();
    if (span.start > context.size() || context.compare(span.start, span.text.size(), span.text) != 0) {
      throw SchemaError("answer", "span text does not match the task context at start");
    }
    return span;
  }
  auto pos = context.find(span.text);
  if (pos == std::string::npos) throw SchemaError("answer", "span text not found in the task context");
  span.start = pos;
  return span;
}

}  // namespace detail

inline WoteBuild build_wote(const std::vector<nlohmann::json>& input, const WoteOptions& opts = {}) {
  WoteBuild out;
  out.report.input = input.size();
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto& j = input[i];
    std::string id = j.is_object() && j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : "";
    try {
      if (!j.is_object()) throw SchemaError("record", "must be an object");
      tbf::detail::require_string(j, "id");
      std::string question = tbf::detail::require_string(j, "question");
      bool is_question = detail::require_bool(j, "is_question");
      bool answerable = detail::require_bool(j, "answerable");
      bool relevant = detail::require_bool(j, "relevant");
      bool useful = detail::require_bool(j, "useful");
      bool external = detail::require_bool(j, "external_knowledge");

      if (!is_question) continue;
      ++out.report.stage_counts[0];
      if (!answerable) continue;
      ++out.report.stage_counts[1];
      bool keep = opts.require_relevant_and_useful ? (relevant && useful) : (relevant || useful);
      if (!keep) continue;
      ++out.report.stage_counts[2];
      if (!j.contains("task") || j["task"].is_null()) continue;
      Task task = load_task(j["task"]);
      ++out.report.stage_counts[3];
      if (external) continue;
      ++out.report.stage_counts[4];

      WoTeRecord r;
      r.id = id;
      r.question = question;
      r.task = std::move(task);
      r.domain = r.task.domain;
      r.answer = detail::annotate_span(tbf::detail::require_field(j, "answer"), serialize_task_context(r.task));
      if (j.contains("category") && !j["category"].is_null()) {
        if (!j["category"].is_string()) throw SchemaError("category", "must be a string");
        auto c = parse_category(j["category"].get<std::string>());
        if (!c) throw SchemaError("category", "not a known question category");
        r.category = *c;
      } else {
        r.category = classify_question(question);
      }
      if (j.contains("history")) r.history = tbf::eval::detail::parse_history(j["history"]);
      out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      out.report.errors.push_back({i, id, e.what()});
    }
  }
  std::stable_sort(out.records.begin(), out.records.end(),
                   [](const WoTeRecord& a, const WoTeRecord& b) { return a.id < b.id; });
  out.report.output = out.records.size();
  return out;
}

// ---------------------------------------------------------------------------
// JSON lines

struct JsonlError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim_view(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw JsonlError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    out.push_back(std::move(j));
  }
  return out;
}

/// All records from a .jsonl file, or from every .jsonl file in a directory
/// (sorted by file name).
inline std::vector<nlohmann::json> read_jsonl_input(const std::filesystem::path& path) {
  if (!std::filesystem::is_directory(path)) return read_jsonl(path);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<nlohmann::json> out;
  for (const auto& f : files) {
    auto part = read_jsonl(f);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

}  // namespace tbf::eval
