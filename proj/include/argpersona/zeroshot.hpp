#pragma once

// Zero-shot multiple-choice baseline against a hosted chat model.

#include <algorithm>
#include <atomic>
#include <functional>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "corpus.hpp"
#include "llm_client.hpp"
#include "metrics.hpp"

namespace argpersona {

using nlohmann::json;

struct McqParts {
  bool context = false;
  bool argument = true;
  bool knowledge = false;

  // "CAK", "A", "CA", ... in any order.
  static McqParts parse(std::string_view s) {
    McqParts p{false, false, false};
    for (char c : s) {
      switch (std::toupper(static_cast<unsigned char>(c))) {
        case 'C': p.context = true; break;
        case 'A': p.argument = true; break;
        case 'K': p.knowledge = true; break;
        default: throw ConfigError(std::string("unknown input part '") + c + "' (expected C, A or K)");
      }
    }
    return p;
  }

  std::string letters() const {
    std::string s;
    if (context) s += 'C';
    if (argument) s += 'A';
    if (knowledge) s += 'K';
    return s;
  }
};

enum class OptionOrder { canonical, shuffled };

inline OptionOrder parse_option_order(std::string_view s) {
  if (s == "canonical") return OptionOrder::canonical;
  if (s == "shuffled") return OptionOrder::shuffled;
  throw ConfigError("unknown option order '" + std::string(s) + "'");
}

struct McqPrompt {
  std::string text;
  std::vector<std::size_t> options;  // canonical label index per letter, A first
  McqParts parts;

  char letter(std::size_t slot) const { return static_cast<char>('A' + slot); }
};

inline std::string task_question(Task t) {
  return t == Task::kialo ? "How impactful is the argument on the debate?"
                          : "Which side won the debate, according to the audience?";
}

// `option_order` lists canonical label indices; it must be a permutation.
inline McqPrompt build_mcq_prompt(const DebateInstance& instance, const std::optional<std::string>& knowledge,
                                  const McqParts& parts, const std::vector<std::size_t>& option_order) {
  if (!parts.argument) throw ConfigError("multiple-choice prompts must include the argument");
  const auto& labels = label_set(instance.task);
  auto sorted = option_order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (sorted.size() != labels.size() || sorted[i] != i)
      throw ConfigError("option order must be a permutation of the label set");

  McqPrompt p{"", option_order, parts};
  std::string& out = p.text;
  out = "Answer the following multiple choice question.\n\n";
  if (parts.knowledge && knowledge && !trim(*knowledge).empty()) out += "Knowledge:\n" + *knowledge + "\n\n";
  if (parts.context && !instance.context.empty()) {
    out += "Context:\n";
    for (const auto& c : instance.context.nodes) out += c + "\n";
    out += "\n";
  }
  out += "Argument: " + instance.argument + "\n\n";
  out += "Question: " + task_question(instance.task) + "\n";
  for (std::size_t i = 0; i < option_order.size(); ++i)
    out += std::string("(") + p.letter(i) + ") " + labels[option_order[i]] + "\n";
  out += "Answer with the letter of one option only.";
  return p;
}

// Letter -> canonical label index, or kAbstain. Accepted: "A", "(A)", "A.",
// "Answer: A" (each optionally followed by text), or a trailing option letter.
inline std::size_t parse_choice(std::string_view response, const std::vector<std::size_t>& options) noexcept {
  try {
    const std::size_t n = options.size();
    if (n == 0 || n > 26) return kAbstain;
    const std::string text(trim(response));
    const std::string L = std::string("([A-") + static_cast<char>('A' + n - 1) + "])";
    const std::vector<std::regex> forms{
        std::regex("^\\(?" + L + "\\)?[.):]?\\s*$", std::regex::icase),
        std::regex("^\\*{0,2}(?:the\\s+)?answer(?:\\s+is)?\\s*[:\\-]?\\s*\\*{0,2}\\s*\\(?" + L + "\\)?(?:[^A-Za-z]|$)",
                   std::regex::icase),
        std::regex("^\\(" + L + "\\)", std::regex::icase),
        std::regex("^" + L + "[.):](?:\\s|$)"),
        std::regex("(?:^|[^A-Za-z])\\(?" + L + "\\)?[.!]?\\s*$"),
    };
    std::smatch m;
    for (const auto& re : forms) {
      if (std::regex_search(text, m, re)) {
        const auto slot = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(m[1].str()[0])) - 'A');
        return slot < n ? options[slot] : kAbstain;
      }
    }
    return kAbstain;
  } catch (...) {
    return kAbstain;
  }
}

struct ZeroShotConfig {
  std::string model = "gpt-3.5-turbo-0125";
  McqParts parts{false, true, false};
  OptionOrder option_order = OptionOrder::canonical;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  int max_tokens = 16;
  std::size_t concurrency = 4;
  std::size_t bucket_cap = 10;
};

struct ZeroShotRecord {
  std::string instance_id;
  std::string parts;
  std::string prompt_hash;
  std::string raw_response;
  std::optional<std::string> parsed;  // label value, nullopt on abstain
  std::string gold;
  std::optional<std::string> error;
  std::size_t context_length = 0;
  std::size_t predicted_index = kAbstain;
  std::size_t gold_index = 0;
};

inline json to_json(const ZeroShotRecord& r) {
  json j{{"instance_id", r.instance_id},
         {"parts", r.parts},
         {"prompt_hash", r.prompt_hash},
         {"raw_response", r.raw_response},
         {"parsed", r.parsed ? json(*r.parsed) : json(nullptr)},
         {"gold", r.gold}};
  if (r.error) j["error"] = *r.error;
  return j;
}

struct ZeroShotResult {
  MetricsReport report;
  std::vector<ZeroShotRecord> records;  // sorted by instance id
};

inline std::vector<std::size_t> option_order_for(const DebateInstance& inst, const ZeroShotConfig& cfg) {
  std::vector<std::size_t> order(label_set(inst.task).size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (cfg.option_order == OptionOrder::shuffled) {
    auto rng = make_rng(cfg.seed, "option-order:" + inst.id);
    seeded_shuffle(order, rng);
  }
  return order;
}

inline CompletionRequest mcq_request(const McqPrompt& p, const ZeroShotConfig& cfg) {
  CompletionRequest r;
  r.model = cfg.model;
  r.prompt = p.text;
  r.temperature = cfg.temperature;
  r.seed = cfg.seed;
  r.max_tokens = cfg.max_tokens;
  return r;
}

inline std::vector<ScoredRecord> scored_records(const std::vector<ZeroShotRecord>& records) {
  std::vector<ScoredRecord> out;
  for (const auto& r : records) out.push_back({r.predicted_index, r.gold_index, r.context_length});
  return out;
}

using KnowledgeLookup = std::function<std::optional<std::string>(const DebateInstance&)>;

// One request per instance. Transport failures are recorded on the instance
// and scored as abstentions; the run continues.
inline ZeroShotResult run_zero_shot(LlmClient& client, const std::vector<DebateInstance>& instances,
                                    const ZeroShotConfig& cfg, const KnowledgeLookup& knowledge = {}) {
  if (instances.empty()) throw ContractError("zero-shot split is empty");
  if (!cfg.parts.argument) throw ConfigError("multiple-choice prompts must include the argument");
  const Task task = instances.front().task;
  for (const auto& i : instances)
    if (i.task != task) throw ContractError("zero-shot split mixes tasks");

  std::vector<ZeroShotRecord> records(instances.size());
  std::atomic<std::size_t> next{0};
  std::mutex fatal_mu;
  std::exception_ptr fatal;
  const auto worker = [&]() {
    for (std::size_t i = next++; i < instances.size(); i = next++) try {
      const auto& inst = instances[i];
      auto& rec = records[i];
      rec.instance_id = inst.id;
      rec.parts = cfg.parts.letters();
      rec.gold = inst.label.value();
      rec.gold_index = inst.label.index;
      rec.context_length = inst.context.length();
      std::optional<std::string> k;
      if (cfg.parts.knowledge && knowledge) k = knowledge(inst);
      const auto prompt = build_mcq_prompt(inst, k, cfg.parts, option_order_for(inst, cfg));
      const auto req = mcq_request(prompt, cfg);
      rec.prompt_hash = req.hash();
      try {
        rec.raw_response = client.complete(req);
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      rec.predicted_index = rec.error ? kAbstain : parse_choice(rec.raw_response, prompt.options);
      if (rec.predicted_index != kAbstain) rec.parsed = label_set(task)[rec.predicted_index];
    } catch (...) {
      std::lock_guard lock(fatal_mu);
      if (!fatal) fatal = std::current_exception();
      next = instances.size();
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(cfg.concurrency, 1, instances.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });

  ZeroShotResult result;
  result.report = make_report(scored_records(records), label_set(task), cfg.bucket_cap, true);
  result.records = std::move(records);
  return result;
}

}  // namespace argpersona
