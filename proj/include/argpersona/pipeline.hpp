#pragma once

// Orchestration shared by the command line and the acceptance checks:
// knowledge attachment, dataset encoding, knowledge generation runs and the
// ablation grid.

#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptnet.hpp"
#include "corpus.hpp"
#include "knowledge.hpp"
#include "knowledge_store.hpp"
#include "llm_client.hpp"
#include "metrics.hpp"
#include "prompt_template.hpp"
#include "toy_backbone.hpp"
#include "tuner.hpp"

namespace argpersona {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Knowledge attachment
// ---------------------------------------------------------------------------

struct KnowledgeOptions {
  PersonaFilter filter;
  TripleForm triple_form = TripleForm::triple;
};

// Missing records and knowledge-missing instances train without background.
inline Knowledge knowledge_for(const DebateInstance& inst, const KnowledgeStore* store, const KnowledgeOptions& opts) {
  if (!store) return std::monostate{};
  const auto* rec = store->find(inst.id);
  if (!rec || rec->missing) return std::monostate{};
  switch (rec->kind) {
    case KnowledgeKind::persona: {
      auto pk = select_personae(rec->personae, opts.filter);
      if (pk.set.personae.empty()) return std::monostate{};
      return pk;
    }
    case KnowledgeKind::background:
      if (trim(rec->text).empty()) return std::monostate{};
      return rec->text;
    case KnowledgeKind::conceptnet:
      if (rec->triples.empty()) return std::monostate{};
      return render_triples(rec->triples, opts.triple_form);
  }
  return std::monostate{};
}

// Plain-text rendering of the same knowledge for zero-shot prompts.
inline std::optional<std::string> knowledge_text(const Knowledge& k) {
  if (const auto* s = std::get_if<std::string>(&k)) return *s;
  if (const auto* pk = std::get_if<PersonaKnowledge>(&k)) {
    std::string out;
    for (std::size_t i = 0; i < pk->set.personae.size(); ++i) {
      if (i) out += "\n";
      for (const auto& line : persona_lines(pk->set.personae[i], pk->dimensions))
        out += std::string(dimension_label(line.dimension)) + " " + line.text + "\n";
    }
    return out;
  }
  return std::nullopt;
}

inline std::vector<DebateInstance> select_split(const std::vector<DebateInstance>& all, Split split) {
  std::vector<DebateInstance> out;
  for (const auto& d : all)
    if (d.split == split) out.push_back(d);
  return out;
}

inline std::vector<EncodedExample> encode_instances(const BackboneAdapter& backbone,
                                                    const std::vector<DebateInstance>& instances,
                                                    const KnowledgeStore* store, const KnowledgeOptions& opts,
                                                    const TemplateSpec& spec) {
  std::vector<EncodedExample> out;
  out.reserve(instances.size());
  for (const auto& d : instances)
    out.push_back(encode_example(backbone, d, render(d, knowledge_for(d, store, opts), spec), spec.token_budget));
  return out;
}

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

// Only the bundled toy encoder-decoder is constructible offline.
inline std::unique_ptr<BackboneAdapter> make_backbone(const json& description) {
  const auto name = description.value("name", std::string("toy-encdec"));
  if (name != "toy-encdec") throw ConfigError("unsupported backbone '" + name + "' (available: toy-encdec)");
  return std::make_unique<ToyBackbone>(toy_config_from_json(description.value("config", json::object())));
}

// Rebuilds the checkpoint's backbone and checks its digest.
inline std::unique_ptr<BackboneAdapter> restore_backbone(const Checkpoint& ckpt) {
  auto bb = make_backbone(ckpt.backbone);
  if (!ckpt.parameters.empty()) {
    auto& params = bb->mutable_parameters();
    if (params.size() != ckpt.parameters.size()) throw Error("checkpoint parameter count differs from the backbone");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name != ckpt.parameters[i].name ||
          params[i].value.rows() != ckpt.parameters[i].value.rows() ||
          params[i].value.cols() != ckpt.parameters[i].value.cols())
        throw Error("checkpoint parameter '" + ckpt.parameters[i].name + "' does not fit the backbone");
      params[i].value = ckpt.parameters[i].value;
    }
  }
  if (bb->digest() != ckpt.backbone_digest) throw Error("backbone digest differs from the checkpoint");
  return bb;
}

// ---------------------------------------------------------------------------
// Knowledge generation
// ---------------------------------------------------------------------------

struct GenerationOptions {
  KnowledgeKind kind = KnowledgeKind::persona;
  ElicitationConfig elicitation;
  std::uint64_t seed = 0;
  std::size_t concurrency = 4;
  const ConceptKb* kb = nullptr;
  std::size_t max_ngram = 3;
};

struct GenerationSummary {
  std::vector<KnowledgeRecord> records;  // input order
  std::size_t missing = 0;
  std::vector<std::string> failures;     // "<id>: <message>"
};

// Output order follows the input regardless of concurrency, so the JSONL is
// byte-stable for a fixed seed and model.
inline GenerationSummary generate_knowledge(LlmClient* client, const std::vector<DebateInstance>& instances,
                                            const PromptPools& pools, const GenerationOptions& opts) {
  if (opts.kind == KnowledgeKind::conceptnet && !opts.kb) throw ConfigError("ConceptNet grounding needs a kb file");
  if (opts.kind != KnowledgeKind::conceptnet && !client) throw ConfigError("knowledge generation needs a client");
  GenerationSummary summary;
  summary.records.resize(instances.size());
  std::vector<std::vector<std::string>> failures(instances.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr fatal;
  const auto work = [&]() {
    for (std::size_t i = next++; i < instances.size(); i = next++) {
      const auto& inst = instances[i];
      auto& rec = summary.records[i];
      rec.instance_id = inst.id;
      rec.kind = opts.kind;
      try {
        switch (opts.kind) {
          case KnowledgeKind::persona: {
            auto res = elicit_personae(*client, inst, pools, opts.elicitation, opts.seed);
            failures[i] = res.failures;
            rec.model = opts.elicitation.model;
            if (res.personae) {
              rec.personae = std::move(*res.personae);
              rec.prompt_hash = rec.personae.prompt_hash;
            } else {
              rec.missing = true;
              rec.personae = PersonaSet{inst.id, {}, opts.elicitation.model, ""};
            }
            break;
          }
          case KnowledgeKind::background: {
            rec.model = opts.elicitation.model;
            try {
              auto bk = generate_background_knowledge(*client, inst, opts.elicitation.model);
              rec.text = bk.text;
              rec.prompt_hash = bk.prompt_hash;
            } catch (const EmptyGenerationError& e) {
              rec.missing = true;
              failures[i].emplace_back(e.what());
            }
            break;
          }
          case KnowledgeKind::conceptnet:
            rec.triples = ground_conceptnet(inst, *opts.kb, opts.max_ngram);
            break;
        }
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!fatal) fatal = std::current_exception();
        next = instances.size();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(opts.concurrency, 1, std::max<std::size_t>(1, instances.size()));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work);
  }
  if (fatal) std::rethrow_exception(fatal);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    summary.missing += summary.records[i].missing;
    for (const auto& f : failures[i]) summary.failures.push_back(instances[i].id + ": " + f);
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class Method { persona_prompt, prompt_tuning, fine_tuning };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::persona_prompt: return "persona-prompt";
    case Method::prompt_tuning: return "prompt-tuning";
    case Method::fine_tuning: return "fine-tuning";
  }
  return "persona-prompt";
}

inline Method parse_method(std::string_view s) {
  if (s == "persona-prompt") return Method::persona_prompt;
  if (s == "prompt-tuning") return Method::prompt_tuning;
  if (s == "fine-tuning") return Method::fine_tuning;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

struct ExperimentSpec {
  Task task = Task::kialo;
  Method method = Method::persona_prompt;
  TemplateSpec spec;
  TrainConfig train;
  KnowledgeOptions knowledge;
  json backbone = json{{"name", "toy-encdec"}, {"config", to_json(ToyBackboneConfig{})}};
  std::size_t bucket_cap = 10;
  Split eval_split = Split::test;
};

struct ExperimentRun {
  TrainResult trained;
  Evaluation evaluation;
  Checkpoint checkpoint;
};

// Trains on the train split, selects on validation, evaluates on
// `eval_split`. prompt-tuning ignores the knowledge store.
inline ExperimentRun run_experiment(const std::vector<DebateInstance>& corpus, const KnowledgeStore* store,
                                    const ExperimentSpec& ex) {
  auto backbone = make_backbone(ex.backbone);
  const KnowledgeStore* used = ex.method == Method::prompt_tuning ? nullptr : store;
  if (ex.method == Method::persona_prompt && !store) throw ConfigError("persona-prompt needs a knowledge file");
  TrainConfig cfg = ex.train;
  cfg.trainable = ex.method == Method::fine_tuning ? TrainableSet::all_parameters : TrainableSet::soft_prompt;

  const auto train_set = encode_instances(*backbone, select_split(corpus, Split::train), used, ex.knowledge, ex.spec);
  const auto val_set = encode_instances(*backbone, select_split(corpus, Split::validation), used, ex.knowledge, ex.spec);
  const auto eval_set = encode_instances(*backbone, select_split(corpus, ex.eval_split), used, ex.knowledge, ex.spec);

  ExperimentRun run;
  run.trained = train(*backbone, train_set, val_set, ex.task, ex.spec, cfg);
  if (!eval_set.empty())
    run.evaluation = evaluate(*backbone, run.trained.soft_prompt, eval_set, ex.task, cfg.max_generated_tokens,
                              ex.bucket_cap);
  run.checkpoint = {ex.task, run.trained.soft_prompt, ex.spec, cfg, backbone->describe(), backbone->digest(),
                    cfg.trainable == TrainableSet::all_parameters ? run.trained.parameters : std::vector<Parameter>{}};
  return run;
}

struct SeedSummary {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

inline SeedSummary summarize(const std::vector<double>& v) {
  SeedSummary s{v, 0.0, 0.0};
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

inline json to_json(const SeedSummary& s) {
  return json{{"values", s.values}, {"mean", round2(s.mean)}, {"std", round2(s.stddev)}};
}

}  // namespace argpersona
