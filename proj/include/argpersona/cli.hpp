#pragma once

// Command-line front end. Every subcommand writes its artifacts atomically and
// a run manifest next to them, also when the run fails.
//
// Exit status: 0 success, 1 pipeline failure, 2 usage error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "common.hpp"
#include "conceptnet.hpp"
#include "corpus.hpp"
#include "http_transport.hpp"
#include "knowledge.hpp"
#include "knowledge_store.hpp"
#include "llm_client.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "prompt_template.hpp"
#include "toy_backbone.hpp"
#include "tuner.hpp"
#include "zeroshot.hpp"

namespace argpersona::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string file_digest(const fs::path& p) { return sha256_hex(read_file(p)); }

class Manifest {
 public:
  Manifest(std::string command, const CLI::App& sub) {
    j_["command"] = std::move(command);
    j_["started"] = utc_now();
    json cfg = json::object();
    for (const auto* opt : sub.get_options()) {
      if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
      const std::string key = opt->get_single_name();
      const auto& results = opt->results();
      if (!results.empty()) {
        cfg[key] = results.size() == 1 ? json(results.front()) : json(results);
      } else if (!opt->get_default_str().empty()) {
        cfg[key] = opt->get_default_str();
      }
    }
    j_["config"] = cfg;
  }

  json& operator[](const char* key) { return j_[key]; }

  void add_input(const fs::path& p) {
    if (!p.empty() && fs::exists(p)) j_["inputs"][p.string()] = file_digest(p);
  }
  void add_output(const fs::path& p) { j_["outputs"][p.string()] = file_digest(p); }

  void write(const fs::path& path, const std::string& status, const std::optional<std::string>& error = {}) {
    j_["status"] = status;
    if (error) j_["error"] = *error;
    j_["finished"] = utc_now();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, j_.dump(2) + "\n");
  }

 private:
  json j_;
};

inline void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, j.dump(2) + "\n");
}

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, s);
}

// ---------------------------------------------------------------------------
// Shared option groups
// ---------------------------------------------------------------------------

struct LlmOptions {
  std::string backend = "mock";
  std::string cache_dir;
  std::string endpoint = "https://api.openai.com";
  std::string endpoint_path = "/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string model = "gpt-3.5-turbo-0125";
  std::size_t concurrency = 4;
  int timeout = 120;

  void add(CLI::App* sub) {
    sub->add_option("--llm", backend, "Model backend")->check(CLI::IsMember({"mock", "http", "cache-only"}))
        ->capture_default_str();
    sub->add_option("--cache-dir", cache_dir, "Response cache directory");
    sub->add_option("--endpoint", endpoint, "Base URL of an OpenAI-compatible endpoint")->capture_default_str();
    sub->add_option("--endpoint-path", endpoint_path, "Chat completions path")->capture_default_str();
    sub->add_option("--api-key-env", api_key_env, "Environment variable holding the API key")->capture_default_str();
    sub->add_option("--model", model, "Model name")->capture_default_str();
    sub->add_option("--concurrency", concurrency, "Maximum in-flight requests")->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--timeout", timeout, "Request timeout in seconds")->capture_default_str();
  }

  std::unique_ptr<LlmClient> make() const {
    ClientConfig cfg;
    if (!cache_dir.empty()) cfg.cache_dir = fs::path(cache_dir);
    cfg.max_in_flight = concurrency;
    std::shared_ptr<Transport> transport;
    if (backend == "mock") {
      transport = std::make_shared<CallbackTransport>(mock_completion);
      cfg.cache_mode = cache_dir.empty() ? CacheMode::disabled : CacheMode::read_write;
    } else if (backend == "http") {
      transport = std::make_shared<HttpTransport>(EndpointConfig{endpoint, endpoint_path, api_key_env, timeout});
    } else {
      cfg.cache_mode = CacheMode::cache_only;
    }
    return std::make_unique<LlmClient>(cfg, transport);
  }
};

struct KnowledgeFlags {
  std::string knowledge;
  std::string dimensions = "RSACI";
  std::string stance = "all";
  std::size_t personae = 0;  // 0: all
  std::string kg_form = "triple";

  void add(CLI::App* sub) {
    sub->add_option("--knowledge", knowledge, "Knowledge JSONL from gen-knowledge")->check(CLI::ExistingFile);
    sub->add_option("--dimensions", dimensions, "Persona dimensions to render, e.g. RSACI or RA")->capture_default_str();
    sub->add_option("--stance", stance, "Persona stance group")->check(CLI::IsMember({"all", "pro", "con", "neutral"}))
        ->capture_default_str();
    sub->add_option("--personae", personae, "Keep the first n personae (0 keeps all)")->capture_default_str();
    sub->add_option("--kg-form", kg_form, "ConceptNet rendering")->check(CLI::IsMember({"triple", "language"}))
        ->capture_default_str();
  }

  KnowledgeOptions options() const {
    KnowledgeOptions o;
    o.filter.dimensions = DimensionSet::parse(dimensions);
    o.filter.stance = parse_stance_group(stance);
    if (personae) o.filter.count = personae;
    o.triple_form = parse_triple_form(kg_form);
    return o;
  }

  std::optional<KnowledgeStore> load() const {
    if (knowledge.empty()) return std::nullopt;
    return KnowledgeStore::load(knowledge);
  }
};

struct ModelFlags {
  std::string task = "kialo";
  std::string method = "persona-prompt";
  std::size_t prompt_len = 20;
  std::size_t budget = 512;
  std::string variant = "optimal";
  double lr = 3e-6;
  std::string optimizer = "adafactor";
  std::string schedule = "constant";
  std::size_t steps = 30000;
  std::size_t batch_size = 4;
  std::size_t eval_every = 1000;
  std::size_t max_gen = 10;
  std::uint64_t seed = 0;
  std::string init = "vocab-sample";
  double init_range = 0.5;
  std::string backbone_config;
  std::size_t bucket_cap = 10;

  void add(CLI::App* sub) {
    sub->add_option("--task", task, "Task")->check(CLI::IsMember({"kialo", "ddo"}))->capture_default_str();
    sub->add_option("--method", method, "Training method")
        ->check(CLI::IsMember({"persona-prompt", "prompt-tuning", "fine-tuning"}))
        ->capture_default_str();
    sub->add_option("--prompt-len", prompt_len, "Continuous prompt length")->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--budget", budget, "Maximum input tokens")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--template", variant, "Template variant")
        ->check(CLI::IsMember({"optimal", "template-1", "template-2", "template-3", "template-4"}))
        ->capture_default_str();
    sub->add_option("--lr", lr, "Learning rate")->capture_default_str();
    sub->add_option("--optimizer", optimizer, "Optimizer")->check(CLI::IsMember({"adafactor", "adam", "sgd"}))
        ->capture_default_str();
    sub->add_option("--schedule", schedule, "Learning-rate schedule")->check(CLI::IsMember({"constant", "linear"}))
        ->capture_default_str();
    sub->add_option("--steps", steps, "Training steps")->capture_default_str();
    sub->add_option("--batch-size", batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--eval-every", eval_every, "Validation interval in steps")->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--max-gen", max_gen, "Maximum label-word tokens")->capture_default_str();
    sub->add_option("--seed", seed, "Master seed")->capture_default_str();
    sub->add_option("--init", init, "Soft prompt initialization")
        ->check(CLI::IsMember({"vocab-sample", "small-uniform"}))
        ->capture_default_str();
    sub->add_option("--init-range", init_range, "Range for small-uniform initialization")->capture_default_str();
    sub->add_option("--backbone-config", backbone_config, "Toy backbone config JSON")->check(CLI::ExistingFile);
    sub->add_option("--bucket-cap", bucket_cap, "Context lengths >= cap share one bucket")->capture_default_str();
  }

  ExperimentSpec experiment(const KnowledgeFlags& k) const {
    ExperimentSpec ex;
    ex.task = parse_task(task);
    ex.method = parse_method(method);
    ex.spec = TemplateSpec::for_variant(parse_variant(variant));
    ex.spec.continuous_slots = prompt_len;
    ex.spec.token_budget = budget;
    ex.train.learning_rate = lr;
    ex.train.optimizer = parse_optimizer(optimizer);
    ex.train.schedule = parse_schedule(schedule);
    ex.train.max_steps = steps;
    ex.train.batch_size = batch_size;
    ex.train.eval_every = eval_every;
    ex.train.max_input_tokens = budget;
    ex.train.max_generated_tokens = max_gen;
    ex.train.seed = seed;
    ex.train.init = parse_init(init);
    ex.train.init_range = init_range;
    ex.knowledge = k.options();
    ex.bucket_cap = bucket_cap;
    ToyBackboneConfig tc;
    if (!backbone_config.empty()) tc = toy_config_from_json(json::parse(read_file(backbone_config)));
    ex.backbone = json{{"name", "toy-encdec"}, {"config", to_json(tc)}};
    return ex;
  }
};

inline std::vector<DebateInstance> load_corpus(const std::string& path, std::optional<Task> task = {}) {
  auto instances = load_instances(path).instances;
  if (task)
    for (const auto& d : instances)
      if (d.task != *task) throw ConfigError("corpus instance '" + d.id + "' is not a " + std::string(task_name(*task)) + " instance");
  return instances;
}

inline json history_json(const TrainResult& r) {
  json h = json::array();
  for (const auto& e : r.history) h.push_back(to_json(e));
  return json{{"selection_metric", r.selection_metric},
              {"best_step", r.best_step},
              {"best_metric", r.best_metric ? json(*r.best_metric) : json(nullptr)},
              {"history", h}};
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Persona-knowledge prompt tuning pipeline for argument assessment"};
    app.set_config("--config", "", "Config file (INI/TOML; [subcommand] sections)");
    app.require_subcommand(1, 1);
    app.fallthrough();

    setup_ingest(app);
    setup_gen_knowledge(app);
    setup_train(app);
    setup_eval(app);
    setup_ablate(app);
    setup_zeroshot(app);
    setup_stats(app);
    setup_validate_ratings(app);

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out_, err_);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out_, err_);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out_, err_);
      return kExitUsage;
    }

    for (auto* sub : app.get_subcommands()) {
      auto it = actions_.find(sub->get_name());
      if (it == actions_.end()) continue;
      return execute(sub->get_name(), *sub, it->second);
    }
    return kExitUsage;
  }

 private:
  using Action = std::function<void(Manifest&)>;

  int execute(const std::string& name, const CLI::App& sub, const Action& action) {
    Manifest manifest(name, sub);
    const fs::path path = manifest_path_.empty() ? fs::path("argpersona-" + name + ".manifest.json")
                                                 : fs::path(manifest_path_);
    try {
      action(manifest);
    } catch (const ConfigError& e) {
      err_ << "error: " << e.what() << "\n";
      try_write(manifest, path, "usage-error", e.what());
      return kExitUsage;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << "\n";
      try_write(manifest, path, "failed", e.what());
      return kExitFailure;
    }
    try {
      manifest.write(path, "ok");
    } catch (const std::exception& e) {
      err_ << "error: cannot write manifest: " << e.what() << "\n";
      return kExitFailure;
    }
    return kExitOk;
  }

  void try_write(Manifest& m, const fs::path& path, const std::string& status, const std::string& error) {
    try {
      m.write(path, status, error);
    } catch (const std::exception& e) {
      err_ << "error: cannot write manifest: " << e.what() << "\n";
    }
  }

  // Manifests default to "<primary output>.manifest.json".
  void manifest_for(CLI::App* sub, const std::string* primary) {
    sub->add_option("--manifest", manifest_path_, "Run manifest path (default: <output>.manifest.json)");
    sub->callback([this, primary]() {
      if (manifest_path_.empty() && primary && !primary->empty()) manifest_path_ = *primary + ".manifest.json";
    });
  }

  // ---- ingest ------------------------------------------------------------

  struct IngestFlags {
    std::string task, in, out, format = "auto", stats;
    std::size_t min_votes = 3;
    double agreement = 0.6;
    std::size_t folds = 3;
    std::vector<std::size_t> fold_sizes;
    std::size_t rotation = 0;
    int min_margin = 2;
    std::size_t max_sentences = 40;
    std::uint64_t seed = 0;
    bool lenient = false;
  } ingest_;

  void setup_ingest(CLI::App& app) {
    auto* sub = app.add_subcommand("ingest", "Validate, filter and split a raw corpus into canonical JSONL");
    auto& f = ingest_;
    sub->add_option("--task", f.task, "Task")->required()->check(CLI::IsMember({"kialo", "ddo"}));
    sub->add_option("--in", f.in, "Raw input JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Canonical corpus JSONL")->required();
    sub->add_option("--format", f.format, "Input format")->check(CLI::IsMember({"auto", "tree", "instances", "ddo"}))
        ->capture_default_str();
    sub->add_option("--stats", f.stats, "Write corpus statistics JSON here");
    sub->add_option("--min-votes", f.min_votes, "Minimum valid votes per claim")->capture_default_str();
    sub->add_option("--agreement", f.agreement, "Minimum share of the winning impact band")->capture_default_str();
    sub->add_option("--folds", f.folds, "Number of DDO folds (train/validation/test)")->capture_default_str();
    sub->add_option("--fold-sizes", f.fold_sizes, "Exact DDO fold sizes");
    sub->add_option("--fold-rotation", f.rotation, "Rotate which fold is train/validation/test")->capture_default_str();
    sub->add_option("--min-margin", f.min_margin, "Minimum DDO vote margin")->capture_default_str();
    sub->add_option("--max-sentences", f.max_sentences, "Maximum sentences per side per round")->capture_default_str();
    sub->add_option("--seed", f.seed, "Seed for fold assignment")->capture_default_str();
    sub->add_flag("--lenient", f.lenient, "Skip malformed canonical records instead of failing");
    manifest_for(sub, &f.out);
    actions_["ingest"] = [this](Manifest& m) { do_ingest(m); };
  }

  void do_ingest(Manifest& m) {
    const auto& f = ingest_;
    const Task task = parse_task(f.task);
    std::string format = f.format;
    if (format == "auto") format = task == Task::kialo ? "tree" : "ddo";
    if ((task == Task::ddo) != (format == "ddo") && format != "instances")
      throw ConfigError("format '" + format + "' does not fit task " + f.task);
    m.add_input(f.in);
    std::vector<DebateInstance> instances;
    json details;
    if (format == "instances") {
      auto rep = load_instances(f.in, !f.lenient);
      for (auto& d : rep.instances)
        if (d.task != task) throw ConfigError("record '" + d.id + "' is not a " + f.task + " instance");
      instances = std::move(rep.instances);
      json rejected = json::array();
      for (const auto& r : rep.rejected) rejected.push_back({{"line", r.line}, {"message", r.message}});
      details["rejected"] = rejected;
    } else if (format == "tree") {
      const auto tree = load_kialo_tree(f.in);
      VotePolicy policy;
      policy.min_valid_votes = f.min_votes;
      policy.agreement = f.agreement;
      auto rep = instances_from_tree(tree, policy);
      instances = std::move(rep.instances);
      details = {{"nodes", tree.nodes().size()},
                 {"unvoted", rep.unvoted},
                 {"insufficient_votes", rep.insufficient_votes},
                 {"low_agreement", rep.low_agreement}};
    } else {
      DdoFilterRules rules;
      rules.min_vote_margin = f.min_margin;
      rules.max_sentences_per_round = f.max_sentences;
      const auto debates = load_ddo(f.in);
      const auto res = filter_ddo(debates, rules);
      if (f.folds != 3) throw ConfigError("DDO ingestion maps three folds to train/validation/test");
      const auto sizes = f.fold_sizes.empty() ? even_fold_sizes(res.kept.size(), f.folds) : f.fold_sizes;
      if (sizes.size() != 3) throw ConfigError("--fold-sizes needs exactly three sizes");
      const auto fold = split_folds(res.kept.size(), sizes, f.seed);
      for (std::size_t i = 0; i < res.kept.size(); ++i)
        instances.push_back(ddo_instance(res.kept[i], kAllSplits[(fold[i] + f.rotation) % 3]));
      json elim = json::object();
      for (const auto& [reason, count] : res.eliminated) elim[reason] = count;
      details = {{"debates", debates.size()}, {"kept", res.kept.size()}, {"eliminated", elim}, {"fold_sizes", sizes}};
      m["seeds"] = {{"fold-split", f.seed}};
    }
    write_instances(f.out, instances);
    m.add_output(f.out);
    const auto stats = to_json(corpus_stats(instances, task));
    m["ingest"] = details;
    m["stats"] = stats;
    if (!f.stats.empty()) {
      write_json(f.stats, stats);
      m.add_output(f.stats);
    }
    out_ << stats.dump(2) << "\n";
  }

  // ---- gen-knowledge -----------------------------------------------------

  struct GenFlags {
    std::string corpus, out, kind = "persona", kb, pools, split = "all";
    std::uint64_t seed = 0;
    std::size_t k = 3;
    std::size_t max_regenerations = 2;
    double temperature = 1.0;
    std::size_t max_ngram = 3;
    LlmOptions llm;
  } gen_;

  void setup_gen_knowledge(CLI::App& app) {
    auto* sub = app.add_subcommand("gen-knowledge", "Generate persona, background or ConceptNet knowledge");
    auto& f = gen_;
    sub->add_option("--corpus", f.corpus, "Canonical corpus JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Knowledge JSONL")->required();
    sub->add_option("--kind", f.kind, "Knowledge kind")->check(CLI::IsMember({"persona", "background", "conceptnet"}))
        ->capture_default_str();
    sub->add_option("--kb", f.kb, "ConceptNet triples (TSV or assertion CSV)")->check(CLI::ExistingFile);
    sub->add_option("--pools", f.pools, "Instruction and in-context example pools JSON")->check(CLI::ExistingFile);
    sub->add_option("--split", f.split, "Only instances of this split")
        ->check(CLI::IsMember({"all", "train", "validation", "test"}))
        ->capture_default_str();
    sub->add_option("--seed", f.seed, "Master seed")->capture_default_str();
    sub->add_option("--k", f.k, "In-context examples per request")->capture_default_str();
    sub->add_option("--max-regenerations", f.max_regenerations, "Regenerations after a parse failure")
        ->capture_default_str();
    sub->add_option("--temperature", f.temperature, "Sampling temperature")->capture_default_str();
    sub->add_option("--max-ngram", f.max_ngram, "Longest n-gram for ConceptNet grounding")->capture_default_str();
    f.llm.add(sub);
    manifest_for(sub, &f.out);
    actions_["gen-knowledge"] = [this](Manifest& m) { do_gen_knowledge(m); };
  }

  static PromptPools load_pools(const std::string& path) {
    if (path.empty()) return {default_instructions(), default_examples()};
    const auto j = json::parse(read_file(path));
    PromptPools p;
    p.instructions = j.at("instructions").get<std::vector<std::string>>();
    for (const auto& e : j.at("examples"))
      p.examples.push_back({e.value("context", std::vector<std::string>{}), e.at("argument").get<std::string>(),
                            e.at("personae").get<std::string>()});
    return p;
  }

  void do_gen_knowledge(Manifest& m) {
    const auto& f = gen_;
    m.add_input(f.corpus);
    auto instances = load_corpus(f.corpus);
    if (f.split != "all") instances = select_split(instances, parse_split(f.split));
    GenerationOptions opts;
    opts.kind = parse_kind(f.kind);
    opts.seed = f.seed;
    opts.concurrency = f.llm.concurrency;
    opts.elicitation.model = f.llm.model;
    opts.elicitation.examples_per_request = f.k;
    opts.elicitation.max_regenerations = f.max_regenerations;
    opts.elicitation.temperature = f.temperature;
    opts.max_ngram = f.max_ngram;
    std::optional<ConceptKb> kb;
    std::unique_ptr<LlmClient> client;
    if (opts.kind == KnowledgeKind::conceptnet) {
      if (f.kb.empty()) throw ConfigError("--kind conceptnet needs --kb");
      m.add_input(f.kb);
      kb = ConceptKb::load(f.kb);
      opts.kb = &*kb;
    } else {
      client = f.llm.make();
      if (!f.pools.empty()) m.add_input(f.pools);
    }
    const auto pools = load_pools(f.pools);
    const auto summary = generate_knowledge(client.get(), instances, pools, opts);
    write_text(f.out, knowledge_jsonl(summary.records));
    m.add_output(f.out);
    m["seeds"] = {{"master", f.seed}, {"substreams", {"instruction-sampling", "example-sampling"}}};
    m["knowledge"] = {{"kind", f.kind},
                      {"instances", summary.records.size()},
                      {"missing", summary.missing},
                      {"failures", summary.failures},
                      {"stance_table", kStanceTableVersion},
                      {"model", f.llm.model},
                      {"llm", f.llm.backend},
                      {"network_calls", client ? client->network_calls() : 0}};
    out_ << "wrote " << summary.records.size() << " records (" << summary.missing << " knowledge-missing) to "
         << f.out << "\n";
  }

  // ---- train -------------------------------------------------------------

  struct TrainFlags {
    std::string corpus, out, history;
    ModelFlags model;
    KnowledgeFlags knowledge;
  } train_;

  void setup_train(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "Train a soft prompt (or a baseline) and write a checkpoint");
    auto& f = train_;
    sub->add_option("--corpus", f.corpus, "Canonical corpus JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Checkpoint JSON")->required();
    sub->add_option("--history", f.history, "Training history JSON (default: <out>.history.json)");
    f.model.add(sub);
    f.knowledge.add(sub);
    manifest_for(sub, &f.out);
    actions_["train"] = [this](Manifest& m) { do_train(m); };
  }

  static void record_experiment(Manifest& m, const ExperimentSpec& ex) {
    m["seeds"] = {{"master", ex.train.seed}, {"substreams", {"init", "shuffle#<epoch>"}}};
    m["template"] = to_json(ex.spec);
    m["train_config"] = to_json(ex.train);
    m["method"] = method_name(ex.method);
    m["token_counter"] = "backbone";
  }

  void do_train(Manifest& m) {
    auto& f = train_;
    const auto ex = f.model.experiment(f.knowledge);
    record_experiment(m, ex);
    m.add_input(f.corpus);
    m.add_input(f.knowledge.knowledge);
    const auto corpus = load_corpus(f.corpus, ex.task);
    const auto store = f.knowledge.load();
    auto run_ex = ex;
    run_ex.eval_split = Split::validation;
    const auto run = run_experiment(corpus, store ? &*store : nullptr, run_ex);
    write_json(f.out, to_json(run.checkpoint));
    m.add_output(f.out);
    const fs::path hist = f.history.empty() ? fs::path(f.out + ".history.json") : fs::path(f.history);
    write_json(hist, history_json(run.trained));
    m.add_output(hist);
    m["backbone"] = {{"description", run.checkpoint.backbone}, {"digest", run.checkpoint.backbone_digest}};
    m["history"] = history_json(run.trained);
    out_ << "best " << run.trained.selection_metric << " "
         << (run.trained.best_metric ? std::to_string(*run.trained.best_metric) : std::string("n/a")) << " at step "
         << run.trained.best_step << "; checkpoint " << f.out << "\n";
  }

  // ---- eval --------------------------------------------------------------

  struct EvalFlags {
    std::string checkpoint, corpus, out, predictions, split = "test";
    std::size_t bucket_cap = 10;
    KnowledgeFlags knowledge;
  } eval_;

  void setup_eval(CLI::App& app) {
    auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
    auto& f = eval_;
    sub->add_option("--checkpoint", f.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--corpus", f.corpus, "Canonical corpus JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Metrics report JSON")->required();
    sub->add_option("--predictions", f.predictions, "Per-instance predictions JSONL");
    sub->add_option("--split", f.split, "Split to evaluate")->check(CLI::IsMember({"train", "validation", "test"}))
        ->capture_default_str();
    sub->add_option("--bucket-cap", f.bucket_cap, "Context lengths >= cap share one bucket")->capture_default_str();
    f.knowledge.add(sub);
    manifest_for(sub, &f.out);
    actions_["eval"] = [this](Manifest& m) { do_eval(m); };
  }

  void do_eval(Manifest& m) {
    auto& f = eval_;
    m.add_input(f.checkpoint);
    m.add_input(f.corpus);
    m.add_input(f.knowledge.knowledge);
    const auto ckpt = checkpoint_from_json(json::parse(read_file(f.checkpoint)));
    const auto backbone = restore_backbone(ckpt);
    const auto store = f.knowledge.load();
    const auto instances = select_split(load_corpus(f.corpus, ckpt.task), parse_split(f.split));
    const auto data = encode_instances(*backbone, instances, store ? &*store : nullptr, f.knowledge.options(), ckpt.spec);
    const auto ev = evaluate(*backbone, ckpt.soft_prompt, data, ckpt.task, ckpt.config.max_generated_tokens, f.bucket_cap);
    const auto report = to_json(ev.report);
    write_json(f.out, report);
    m.add_output(f.out);
    if (!f.predictions.empty()) {
      std::string lines;
      const auto& labels = label_set(ckpt.task);
      for (std::size_t i = 0; i < data.size(); ++i)
        lines += json{{"instance_id", data[i].id},
                      {"prediction", labels[ev.predictions[i].label]},
                      {"gold", labels[data[i].gold]},
                      {"scores", ev.predictions[i].scores},
                      {"tie", ev.predictions[i].tie},
                      {"context_length", data[i].context_length}}
                     .dump() +
                 "\n";
      write_text(f.predictions, lines);
      m.add_output(f.predictions);
    }
    m["template"] = to_json(ckpt.spec);
    m["backbone"] = {{"description", ckpt.backbone}, {"digest", ckpt.backbone_digest}};
    m["metrics"] = report;
    out_ << "macro-F1 " << ev.report.f1 << "  accuracy " << ev.report.accuracy << "  (" << ev.report.instances
         << " instances)\n";
  }

  // ---- ablate ------------------------------------------------------------

  struct AblateFlags {
    std::string corpus, out, baseline, eval_split = "test";
    std::vector<std::uint64_t> seeds{0, 1, 2};
    double alpha = 0.05;
    ModelFlags model;
    KnowledgeFlags knowledge;
  } ablate_;

  void setup_ablate(CLI::App& app) {
    auto* sub = app.add_subcommand("ablate", "Run one ablation cell over several seeds");
    auto& f = ablate_;
    sub->add_option("--corpus", f.corpus, "Canonical corpus JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Ablation report JSON")->required();
    sub->add_option("--seeds", f.seeds, "Seeds to run")->capture_default_str();
    sub->add_option("--baseline", f.baseline, "Earlier ablation report for a paired t-test")->check(CLI::ExistingFile);
    sub->add_option("--alpha", f.alpha, "Significance level")->capture_default_str();
    sub->add_option("--eval-split", f.eval_split, "Split to report")
        ->check(CLI::IsMember({"validation", "test"}))
        ->capture_default_str();
    f.model.add(sub);
    f.knowledge.add(sub);
    manifest_for(sub, &f.out);
    actions_["ablate"] = [this](Manifest& m) { do_ablate(m); };
  }

  void do_ablate(Manifest& m) {
    auto& f = ablate_;
    if (f.seeds.empty()) throw ConfigError("--seeds needs at least one seed");
    auto ex = f.model.experiment(f.knowledge);
    ex.eval_split = parse_split(f.eval_split);
    record_experiment(m, ex);
    m.add_input(f.corpus);
    m.add_input(f.knowledge.knowledge);
    const auto corpus = load_corpus(f.corpus, ex.task);
    const auto store = f.knowledge.load();
    const std::string metric = ex.task == Task::kialo ? "f1" : "accuracy";
    json per_seed = json::array();
    std::vector<double> f1s, accs, primary;
    for (auto seed : f.seeds) {
      ex.train.seed = seed;
      const auto run = run_experiment(corpus, store ? &*store : nullptr, ex);
      if (run.evaluation.report.instances == 0) throw ConfigError("evaluation split is empty");
      const auto& r = run.evaluation.report;
      per_seed.push_back({{"seed", seed},
                          {"precision", r.precision},
                          {"recall", r.recall},
                          {"f1", r.f1},
                          {"accuracy", r.accuracy},
                          {"best_step", run.trained.best_step}});
      f1s.push_back(r.f1);
      accs.push_back(r.accuracy);
      primary.push_back(metric == "f1" ? r.f1 : r.accuracy);
    }
    json report{{"cell",
                 {{"method", method_name(ex.method)},
                  {"dimensions", ex.knowledge.filter.dimensions.letters()},
                  {"stance", stance_group_name(ex.knowledge.filter.stance)},
                  {"personae", ex.knowledge.filter.count ? json(*ex.knowledge.filter.count) : json("all")},
                  {"kg_form", f.knowledge.kg_form},
                  {"template", variant_name(ex.spec.variant)},
                  {"prompt_len", ex.spec.continuous_slots},
                  {"knowledge", f.knowledge.knowledge.empty() ? json(nullptr) : json(f.knowledge.knowledge)}}},
                {"task", task_name(ex.task)},
                {"metric", metric},
                {"eval_split", f.eval_split},
                {"per_seed", per_seed},
                {"summary", {{"f1", to_json(summarize(f1s))}, {"accuracy", to_json(summarize(accs))}}}};
    if (!f.baseline.empty()) {
      m.add_input(f.baseline);
      const auto base = json::parse(read_file(f.baseline));
      std::vector<double> b;
      std::vector<std::uint64_t> base_seeds;
      for (const auto& s : base.at("per_seed")) {
        b.push_back(s.at(metric).get<double>());
        base_seeds.push_back(s.at("seed").get<std::uint64_t>());
      }
      if (base_seeds != f.seeds) throw ConfigError("baseline report was run with different seeds");
      json t;
      try {
        const auto res = paired_t_test(primary, b);
        t = {{"t", res.t}, {"p", res.p}, {"dof", res.dof}, {"significant", res.p < f.alpha}, {"alpha", f.alpha}};
      } catch (const DegenerateSampleError& e) {
        t = {{"error", e.what()}};
      }
      report["paired_t_test"] = t;
    }
    write_json(f.out, report);
    m.add_output(f.out);
    m["metrics"] = report;
    out_ << metric << " mean " << summarize(primary).mean << " over " << f.seeds.size() << " seeds\n";
  }

  // ---- zeroshot ----------------------------------------------------------

  struct ZeroShotFlags {
    std::string corpus, out, records, split = "test", parts = "A", option_order = "canonical";
    std::uint64_t seed = 0;
    std::size_t bucket_cap = 10;
    LlmOptions llm;
    KnowledgeFlags knowledge;
  } zs_;

  void setup_zeroshot(CLI::App& app) {
    auto* sub = app.add_subcommand("zeroshot", "Zero-shot multiple-choice baseline with a chat model");
    auto& f = zs_;
    sub->add_option("--corpus", f.corpus, "Canonical corpus JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Metrics report JSON")->required();
    sub->add_option("--records", f.records, "Per-instance records JSONL (default: <out>.records.jsonl)");
    sub->add_option("--split", f.split, "Split to evaluate")->check(CLI::IsMember({"train", "validation", "test"}))
        ->capture_default_str();
    sub->add_option("--parts", f.parts, "Inputs: any of C (context), A (argument), K (knowledge)")->capture_default_str();
    sub->add_option("--option-order", f.option_order, "Option order policy")
        ->check(CLI::IsMember({"canonical", "shuffled"}))
        ->capture_default_str();
    sub->add_option("--seed", f.seed, "Seed")->capture_default_str();
    sub->add_option("--bucket-cap", f.bucket_cap, "Context lengths >= cap share one bucket")->capture_default_str();
    f.llm.add(sub);
    f.knowledge.add(sub);
    manifest_for(sub, &f.out);
    actions_["zeroshot"] = [this](Manifest& m) { do_zeroshot(m); };
  }

  void do_zeroshot(Manifest& m) {
    auto& f = zs_;
    m.add_input(f.corpus);
    m.add_input(f.knowledge.knowledge);
    ZeroShotConfig cfg;
    cfg.model = f.llm.model;
    cfg.parts = McqParts::parse(f.parts);
    cfg.option_order = parse_option_order(f.option_order);
    cfg.seed = f.seed;
    cfg.concurrency = f.llm.concurrency;
    cfg.bucket_cap = f.bucket_cap;
    if (cfg.parts.knowledge && f.knowledge.knowledge.empty()) throw ConfigError("--parts with K needs --knowledge");
    const auto instances = select_split(load_corpus(f.corpus), parse_split(f.split));
    const auto store = f.knowledge.load();
    const auto kopts = f.knowledge.options();
    KnowledgeLookup lookup;
    if (store)
      lookup = [&](const DebateInstance& d) { return knowledge_text(knowledge_for(d, &*store, kopts)); };
    auto client = f.llm.make();
    const auto res = run_zero_shot(*client, instances, cfg, lookup);
    const auto report = to_json(res.report);
    write_json(f.out, report);
    m.add_output(f.out);
    std::string lines;
    for (const auto& r : res.records) lines += to_json(r).dump() + "\n";
    const fs::path rec = f.records.empty() ? fs::path(f.out + ".records.jsonl") : fs::path(f.records);
    write_text(rec, lines);
    m.add_output(rec);
    m["metrics"] = report;
    m["llm"] = {{"backend", f.llm.backend}, {"model", f.llm.model}, {"network_calls", client->network_calls()}};
    out_ << "macro-F1 " << res.report.f1 << "  accuracy " << res.report.accuracy << "  abstain "
         << res.report.abstain_rate.value_or(0.0) << "%\n";
  }

  // ---- stats -------------------------------------------------------------

  struct StatsFlags {
    std::string corpus, task, out;
  } stats_;

  void setup_stats(CLI::App& app) {
    auto* sub = app.add_subcommand("stats", "Per-split, per-label counts of a canonical corpus");
    auto& f = stats_;
    sub->add_option("--corpus", f.corpus, "Canonical corpus JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--task", f.task, "Task (default: from the first record)")->check(CLI::IsMember({"kialo", "ddo"}));
    sub->add_option("--out", f.out, "Write statistics JSON here");
    manifest_for(sub, &f.out);
    actions_["stats"] = [this](Manifest& m) { do_stats(m); };
  }

  void do_stats(Manifest& m) {
    auto& f = stats_;
    m.add_input(f.corpus);
    const auto instances = load_corpus(f.corpus);
    const Task task = !f.task.empty() ? parse_task(f.task) : instances.empty() ? Task::kialo : instances.front().task;
    const auto stats = to_json(corpus_stats(instances, task));
    if (!f.out.empty()) {
      write_json(f.out, stats);
      m.add_output(f.out);
    }
    m["stats"] = stats;
    out_ << stats.dump(2) << "\n";
  }

  // ---- validate-ratings --------------------------------------------------

  struct RatingsFlags {
    std::string ratings, out;
  } ratings_;

  void setup_validate_ratings(CLI::App& app) {
    auto* sub = app.add_subcommand("validate-ratings", "Agreement statistics for human ratings of generated knowledge");
    auto& f = ratings_;
    sub->add_option("--ratings", f.ratings, "CSV with item_id,annotator_id,aspect,score")->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "Write the agreement report JSON here");
    manifest_for(sub, &f.out);
    actions_["validate-ratings"] = [this](Manifest& m) { do_validate_ratings(m); };
  }

  void do_validate_ratings(Manifest& m) {
    auto& f = ratings_;
    m.add_input(f.ratings);
    const auto matrices = load_ratings_csv(f.ratings);
    json report = json::object();
    for (const auto& [aspect, mat] : matrices) {
      json a{{"items", mat.items()}, {"raters", mat.raters()}};
      if (mat.raters() >= 2) {
        a["pairwise_agreement"] = round2(100.0 * pairwise_agreement(mat));
        try {
          a["fleiss_kappa"] = fleiss_kappa(mat);
        } catch (const UndefinedKappaError& e) {
          a["fleiss_kappa"] = nullptr;
          a["fleiss_kappa_note"] = e.what();
        }
      }
      json majority = json::object();
      std::size_t ties = 0;
      for (const auto& row : mat.ratings) {
        if (auto v = majority_vote(row))
          majority[std::to_string(*v)] = majority.value(std::to_string(*v), 0) + 1;
        else
          ++ties;
      }
      a["majority"] = majority;
      a["majority_ties"] = ties;
      report[aspect] = a;
    }
    if (!f.out.empty()) {
      write_json(f.out, report);
      m.add_output(f.out);
    }
    m["metrics"] = report;
    out_ << report.dump(2) << "\n";
  }

  std::ostream& out_;
  std::ostream& err_;
  std::string manifest_path_;
  std::map<std::string, Action> actions_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Runner r(out, err);
  return r.run(argc, argv);
}

}  // namespace argpersona::cli
