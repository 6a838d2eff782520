#pragma once

// Soft prompt tuning against a frozen backbone, plus the full fine-tuning
// and vanilla prompt-tuning baselines, prediction and evaluation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "backbone.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "metrics.hpp"
#include "prompt_template.hpp"

namespace argpersona {

using nlohmann::json;

class VerbalizerError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Per-token log-probabilities are capped from below so scores stay finite.
inline constexpr double kLogProbFloor = -1.0e4;

// ---------------------------------------------------------------------------
// Soft prompt
// ---------------------------------------------------------------------------

enum class InitStrategy { vocab_sample, small_uniform };

inline std::string_view init_name(InitStrategy s) { return s == InitStrategy::vocab_sample ? "vocab-sample" : "small-uniform"; }

inline InitStrategy parse_init(std::string_view s) {
  if (s == "vocab-sample") return InitStrategy::vocab_sample;
  if (s == "small-uniform") return InitStrategy::small_uniform;
  throw ConfigError("unknown soft prompt initialization '" + std::string(s) + "'");
}

struct SoftPrompt {
  Matrix values;  // L x d
  std::string init;
  std::size_t steps = 0;

  std::size_t length() const noexcept { return static_cast<std::size_t>(values.rows()); }
  bool finite() const { return values.allFinite(); }
};

// vocab-sample copies L random rows of the backbone's input embeddings (3
// reserved ids excluded); small-uniform draws from [-range, range].
inline SoftPrompt init_soft_prompt(std::size_t length, std::size_t dim, InitStrategy strategy, std::uint64_t seed,
                                   const BackboneAdapter* backbone = nullptr, double range = 0.5) {
  if (length == 0 || dim == 0) throw ConfigError("soft prompt dimensions must be positive");
  SoftPrompt sp;
  sp.values = Matrix::Zero(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(dim));
  auto rng = make_rng(seed, "init");
  if (strategy == InitStrategy::vocab_sample) {
    if (!backbone) throw ConfigError("vocab-sample initialization needs a backbone");
    const auto& emb = backbone->token_embeddings();
    if (static_cast<std::size_t>(emb.cols()) != dim) throw ConfigError("soft prompt width differs from the backbone");
    const auto rows = static_cast<std::size_t>(emb.rows());
    const std::size_t reserved = rows > 4 ? 3 : 0;
    for (std::size_t i = 0; i < length; ++i)
      sp.values.row(static_cast<Eigen::Index>(i)) =
          emb.row(static_cast<Eigen::Index>(reserved + uniform_index(rng, rows - reserved)));
  } else {
    for (Eigen::Index i = 0; i < sp.values.size(); ++i) sp.values.data()[i] = range * (2.0 * uniform01(rng) - 1.0);
  }
  sp.init = std::string(init_name(strategy));
  return sp;
}

// ---------------------------------------------------------------------------
// Scoring and prediction
// ---------------------------------------------------------------------------

// Label-word token sequences in canonical label order.
inline std::vector<std::vector<TokenId>> label_targets(const BackboneAdapter& backbone, const Verbalizer& verbalizer,
                                                       std::size_t max_tokens = 10) {
  std::vector<std::vector<TokenId>> out;
  for (const auto& w : verbalizer.words()) {
    auto ids = backbone.tokenize(w);
    if (ids.empty()) throw VerbalizerError("label word '" + w + "' maps to no tokens");
    if (ids.size() > max_tokens)
      throw VerbalizerError("label word '" + w + "' needs " + std::to_string(ids.size()) + " tokens (max " +
                            std::to_string(max_tokens) + ")");
    out.push_back(std::move(ids));
  }
  return out;
}

inline std::vector<double> floor_scores(std::vector<double> scores, const std::vector<std::vector<TokenId>>& targets) {
  for (std::size_t i = 0; i < scores.size(); ++i)
    scores[i] = std::max(scores[i], kLogProbFloor * static_cast<double>(targets[i].size()));
  return scores;
}

// Total teacher-forced log-probability of every label word.
inline std::vector<double> score_labels(const BackboneAdapter& backbone, const SoftPrompt& prompt,
                                        const std::vector<TokenId>& input,
                                        const std::vector<std::vector<TokenId>>& targets) {
  for (const auto& t : targets)
    if (t.empty()) throw VerbalizerError("label word maps to an empty token sequence");
  return floor_scores(backbone.score(prompt.values, input, targets), targets);
}

inline std::vector<double> score_labels(const BackboneAdapter& backbone, const SoftPrompt& prompt,
                                        const RenderedPrompt& rendered, const Verbalizer& verbalizer) {
  return score_labels(backbone, prompt, backbone.tokenize(rendered.discrete_text), label_targets(backbone, verbalizer));
}

struct PredictionResult {
  std::vector<double> scores;
  std::size_t label = 0;  // canonical index
  bool tie = false;
};

// Argmax; exact ties go to the lowest canonical index.
inline PredictionResult predict_from_scores(std::vector<double> scores) {
  if (scores.empty()) throw ContractError("no label scores");
  PredictionResult r;
  r.label = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[r.label]) r.label = i;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != r.label && scores[i] == scores[r.label]) r.tie = true;
  r.scores = std::move(scores);
  return r;
}

inline PredictionResult predict(const BackboneAdapter& backbone, const SoftPrompt& prompt,
                                const std::vector<TokenId>& input, const std::vector<std::vector<TokenId>>& targets) {
  return predict_from_scores(score_labels(backbone, prompt, input, targets));
}

inline PredictionResult predict(const BackboneAdapter& backbone, const SoftPrompt& prompt,
                                const RenderedPrompt& rendered, const Verbalizer& verbalizer) {
  return predict_from_scores(score_labels(backbone, prompt, rendered, verbalizer));
}

// Mean negative gold log-probability over the batch.
inline double loss(const std::vector<std::vector<double>>& batch_scores, const std::vector<std::size_t>& golds) {
  if (batch_scores.size() != golds.size()) throw ContractError("every batch item needs a gold label");
  if (golds.empty()) throw ContractError("empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] >= batch_scores[i].size())
      throw ContractError("gold label " + std::to_string(golds[i]) + " has no score");
    total -= batch_scores[i][golds[i]];
  }
  return total / static_cast<double>(golds.size());
}

// ---------------------------------------------------------------------------
// Encoded data
// ---------------------------------------------------------------------------

struct EncodedExample {
  std::string id;
  std::vector<TokenId> input;
  std::size_t gold = 0;
  std::size_t context_length = 0;
};

inline TokenCounter backbone_counter(const BackboneAdapter& backbone) {
  return [&backbone](std::string_view s) { return backbone.tokenize(s).size(); };
}

// Truncates to the budget with the backbone's own segmentation, then tokenizes.
inline EncodedExample encode_example(const BackboneAdapter& backbone, const DebateInstance& instance,
                                     const RenderedPrompt& rendered, std::size_t budget) {
  const auto fitted = truncate(rendered, budget, backbone_counter(backbone));
  return {instance.id, backbone.tokenize(fitted.discrete_text), instance.label.index, instance.context.length()};
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { adafactor, adam, sgd };

inline std::string_view optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::adafactor: return "adafactor";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::sgd: return "sgd";
  }
  return "adafactor";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adafactor") return OptimizerKind::adafactor;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

// Per-matrix optimizer state. Adafactor uses factored second moments for
// matrices, a 1 - t^-0.8 decay, update clipping at RMS 1 and no momentum.
class MatrixOptimizer {
 public:
  MatrixOptimizer(OptimizerKind kind, Eigen::Index rows, Eigen::Index cols) : kind_(kind) {
    if (kind_ == OptimizerKind::adam) {
      m_ = Matrix::Zero(rows, cols);
      v_ = Matrix::Zero(rows, cols);
    } else if (kind_ == OptimizerKind::adafactor) {
      if (rows > 1 && cols > 1) {
        row_ = Eigen::VectorXd::Zero(rows);
        col_ = Eigen::RowVectorXd::Zero(cols);
      } else {
        v_ = Matrix::Zero(rows, cols);
      }
    }
  }

  void step(Matrix& param, const Matrix& grad, double lr) {
    ++t_;
    const double t = static_cast<double>(t_);
    switch (kind_) {
      case OptimizerKind::sgd: param -= lr * grad; break;
      case OptimizerKind::adam: {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        m_ = b1 * m_ + (1.0 - b1) * grad;
        v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        param -= (lr * (m_ / c1).array() / ((v_ / c2).array().sqrt() + eps)).matrix();
        break;
      }
      case OptimizerKind::adafactor: {
        constexpr double eps1 = 1e-30, clip = 1.0;
        const double decay = 1.0 - std::pow(t, -0.8);
        const Matrix g2 = grad.cwiseProduct(grad).array() + eps1;
        Matrix update;
        if (row_.size()) {
          row_ = decay * row_ + (1.0 - decay) * g2.rowwise().mean();
          col_ = decay * col_ + (1.0 - decay) * g2.colwise().mean();
          const Matrix vhat = (row_ * col_) / row_.mean();
          update = grad.array() / vhat.array().sqrt();
        } else {
          v_ = decay * v_ + (1.0 - decay) * g2;
          update = grad.array() / v_.array().sqrt();
        }
        const double rms = std::sqrt(update.squaredNorm() / static_cast<double>(update.size()));
        update /= std::max(1.0, rms / clip);
        param -= lr * update;
        break;
      }
    }
  }

 private:
  OptimizerKind kind_;
  std::size_t t_ = 0;
  Matrix m_, v_;
  Eigen::VectorXd row_;
  Eigen::RowVectorXd col_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainableSet { soft_prompt, all_parameters };

// constant: lr every step. linear: lr * (1 - (step - 1) / max_steps).
enum class LrSchedule { constant, linear };

inline std::string_view schedule_name(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "linear"; }

inline LrSchedule parse_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "linear") return LrSchedule::linear;
  throw ConfigError("unknown learning-rate schedule '" + std::string(s) + "'");
}

inline std::string_view trainable_name(TrainableSet t) {
  return t == TrainableSet::soft_prompt ? "soft-prompt" : "all-parameters";
}

inline TrainableSet parse_trainable(std::string_view s) {
  if (s == "soft-prompt") return TrainableSet::soft_prompt;
  if (s == "all-parameters" || s == "all") return TrainableSet::all_parameters;
  throw ConfigError("unknown trainable set '" + std::string(s) + "'");
}

struct TrainConfig {
  double learning_rate = 3e-6;
  OptimizerKind optimizer = OptimizerKind::adafactor;
  std::size_t batch_size = 4;
  std::size_t max_steps = 30000;
  std::size_t max_input_tokens = 512;
  std::size_t max_generated_tokens = 10;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1000;
  TrainableSet trainable = TrainableSet::soft_prompt;
  InitStrategy init = InitStrategy::vocab_sample;
  double init_range = 0.5;
  LrSchedule schedule = LrSchedule::constant;

  double rate_at(std::size_t step) const {
    if (schedule == LrSchedule::constant || max_steps == 0) return learning_rate;
    return learning_rate * (1.0 - static_cast<double>(step - 1) / static_cast<double>(max_steps));
  }
};

inline json to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"optimizer", optimizer_name(c.optimizer)},
              {"batch_size", c.batch_size},
              {"max_steps", c.max_steps},
              {"max_input_tokens", c.max_input_tokens},
              {"max_generated_tokens", c.max_generated_tokens},
              {"seed", c.seed},
              {"eval_every", c.eval_every},
              {"trainable", trainable_name(c.trainable)},
              {"init", init_name(c.init)},
              {"init_range", c.init_range},
              {"schedule", schedule_name(c.schedule)}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = parse_optimizer(j.value("optimizer", std::string(optimizer_name(c.optimizer))));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.max_input_tokens = j.value("max_input_tokens", c.max_input_tokens);
  c.max_generated_tokens = j.value("max_generated_tokens", c.max_generated_tokens);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.trainable = parse_trainable(j.value("trainable", std::string(trainable_name(c.trainable))));
  c.init = parse_init(j.value("init", std::string(init_name(c.init))));
  c.init_range = j.value("init_range", c.init_range);
  c.schedule = parse_schedule(j.value("schedule", std::string(schedule_name(c.schedule))));
  return c;
}

struct HistoryEntry {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean over steps since the previous entry
  std::optional<double> validation_metric;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

struct TrainResult {
  SoftPrompt soft_prompt;                 // best checkpoint
  std::vector<Parameter> parameters;      // best backbone parameters (all-parameters mode)
  std::vector<HistoryEntry> history;
  std::size_t best_step = 0;
  std::optional<double> best_metric;
  std::string selection_metric;
  std::string digest_before;
  std::string digest_after;
  double final_train_loss = 0.0;
};

inline std::string selection_metric_name(Task t) { return t == Task::kialo ? "macro_f1" : "accuracy"; }

// Scores every example; safe to run concurrently on a read-only backbone.
inline std::vector<PredictionResult> predict_all(const BackboneAdapter& backbone, const SoftPrompt& prompt,
                                                 const std::vector<EncodedExample>& data,
                                                 const std::vector<std::vector<TokenId>>& targets,
                                                 std::size_t threads = 0) {
  std::vector<PredictionResult> out(data.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<std::size_t>(threads, std::max<std::size_t>(1, data.size() / 8));
  const auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < data.size(); i += stride) out[i] = predict(backbone, prompt, data[i].input, targets);
  };
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return out;
}

inline double selection_metric(Task task, const std::vector<PredictionResult>& preds,
                               const std::vector<EncodedExample>& data) {
  std::vector<std::size_t> p, g;
  for (std::size_t i = 0; i < data.size(); ++i) {
    p.push_back(preds[i].label);
    g.push_back(data[i].gold);
  }
  return task == Task::kialo ? macro_prf(p, g, label_set(task).size()).f1 : accuracy(p, g);
}

// Loss and gradients for one batch. Gradients are of the mean loss.
struct BatchGradient {
  double loss = 0.0;
  Matrix prompt_grad;
  ParameterGradients param_grads;
};

inline BatchGradient batch_gradient(const BackboneAdapter& backbone, const SoftPrompt& prompt,
                                    const std::vector<const EncodedExample*>& batch,
                                    const std::vector<std::vector<TokenId>>& targets, TrainableSet trainable) {
  BatchGradient bg;
  bg.prompt_grad = Matrix::Zero(prompt.values.rows(), prompt.values.cols());
  ParameterGradients* pg = nullptr;
  if (trainable == TrainableSet::all_parameters) {
    for (const auto& p : backbone.parameters()) bg.param_grads.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    pg = &bg.param_grads;
  }
  for (const auto* ex : batch)
    bg.loss -= backbone.log_prob_and_grad(prompt.values, ex->input, targets.at(ex->gold), &bg.prompt_grad, pg);
  const double inv = 1.0 / static_cast<double>(batch.size());
  bg.loss *= inv;
  bg.prompt_grad *= -inv;
  for (auto& g : bg.param_grads) g *= -inv;
  return bg;
}

// Trains the soft prompt (and, in all-parameters mode, the backbone) and
// returns the checkpoint with the best validation metric. Deterministic for
// a fixed seed. In soft-prompt mode the backbone digest is checked unchanged.
inline TrainResult train(BackboneAdapter& backbone, const std::vector<EncodedExample>& train_set,
                         const std::vector<EncodedExample>& validation_set, Task task, const TemplateSpec& spec,
                         const TrainConfig& cfg, std::optional<SoftPrompt> initial = std::nullopt) {
  if (train_set.empty()) throw ContractError("training split is empty");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (cfg.eval_every == 0) throw ConfigError("eval-every must be positive");
  spec.validate();
  const Verbalizer verbalizer(task);
  const auto targets = label_targets(backbone, verbalizer, cfg.max_generated_tokens);

  TrainResult result;
  result.selection_metric = selection_metric_name(task);
  result.digest_before = backbone.digest();
  SoftPrompt prompt = initial ? std::move(*initial)
                              : init_soft_prompt(spec.continuous_slots, backbone.embedding_dim(), cfg.init, cfg.seed,
                                                 &backbone, cfg.init_range);
  if (prompt.length() != spec.continuous_slots) throw ConfigError("soft prompt length differs from the template");

  MatrixOptimizer prompt_opt(cfg.optimizer, prompt.values.rows(), prompt.values.cols());
  std::vector<MatrixOptimizer> param_opts;
  if (cfg.trainable == TrainableSet::all_parameters)
    for (const auto& p : backbone.parameters()) param_opts.emplace_back(cfg.optimizer, p.value.rows(), p.value.cols());

  std::vector<std::size_t> order(train_set.size());
  std::size_t epoch = 0, cursor = order.size();
  const auto next_index = [&]() {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      auto rng = make_rng(cfg.seed, "shuffle#" + std::to_string(epoch++));
      seeded_shuffle(order, rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  const auto snapshot = [&](std::size_t step, std::optional<double> metric) {
    result.soft_prompt = prompt;
    result.best_step = step;
    result.best_metric = metric;
    if (cfg.trainable == TrainableSet::all_parameters) result.parameters = backbone.parameters();
  };
  snapshot(0, std::nullopt);
  if (!validation_set.empty())
    snapshot(0, selection_metric(task, predict_all(backbone, prompt, validation_set, targets), validation_set));

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<const EncodedExample*> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) batch.push_back(&train_set[next_index()]);
    auto bg = batch_gradient(backbone, prompt, batch, targets, cfg.trainable);
    if (!std::isfinite(bg.loss) || !bg.prompt_grad.allFinite()) throw DivergenceError("non-finite loss", step);
    const double lr = cfg.rate_at(step);
    prompt_opt.step(prompt.values, bg.prompt_grad, lr);
    if (cfg.trainable == TrainableSet::all_parameters) {
      auto& params = backbone.mutable_parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!bg.param_grads[i].allFinite()) throw DivergenceError("non-finite parameter gradient", step);
        param_opts[i].step(params[i].value, bg.param_grads[i], lr);
      }
    }
    if (!prompt.finite()) throw DivergenceError("soft prompt became non-finite", step);
    prompt.steps = step;
    loss_sum += bg.loss;
    ++loss_count;
    result.final_train_loss = bg.loss;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      HistoryEntry h{step, loss_sum / static_cast<double>(loss_count), std::nullopt};
      loss_sum = 0.0;
      loss_count = 0;
      if (!validation_set.empty()) {
        h.validation_metric =
            selection_metric(task, predict_all(backbone, prompt, validation_set, targets), validation_set);
        if (!result.best_metric || *h.validation_metric >= *result.best_metric) snapshot(step, h.validation_metric);
      } else {
        snapshot(step, std::nullopt);
      }
      result.history.push_back(h);
    }
  }

  if (cfg.trainable == TrainableSet::all_parameters) backbone.mutable_parameters() = result.parameters;
  result.digest_after = backbone.digest();
  if (cfg.trainable == TrainableSet::soft_prompt && result.digest_after != result.digest_before)
    throw ContractError("backbone parameters changed during soft-prompt-only training");
  return result;
}

inline json to_json(const HistoryEntry& h) {
  json j{{"step", h.step}, {"train_loss", h.train_loss}};
  j["validation_metric"] = h.validation_metric ? json(*h.validation_metric) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct Evaluation {
  MetricsReport report;
  std::vector<PredictionResult> predictions;
  std::vector<ScoredRecord> records;
};

inline Evaluation evaluate(const BackboneAdapter& backbone, const SoftPrompt& prompt,
                           const std::vector<EncodedExample>& data, Task task, std::size_t max_generated_tokens = 10,
                           std::size_t bucket_cap = 10) {
  if (data.empty()) throw ContractError("evaluation split is empty");
  const Verbalizer verbalizer(task);
  const auto targets = label_targets(backbone, verbalizer, max_generated_tokens);
  Evaluation ev;
  ev.predictions = predict_all(backbone, prompt, data, targets);
  for (std::size_t i = 0; i < data.size(); ++i)
    ev.records.push_back({ev.predictions[i].label, data[i].gold, data[i].context_length});
  ev.report = make_report(ev.records, label_set(task), bucket_cap);
  return ev;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0, k = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data[static_cast<std::size_t>(k++)] = m(r, c);
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("matrix payload size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0, k = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(k++)];
  return m;
}

inline constexpr std::string_view kCheckpointFormat = "argpersona-checkpoint/1";

struct Checkpoint {
  Task task = Task::kialo;
  SoftPrompt soft_prompt;
  TemplateSpec spec;
  TrainConfig config;
  json backbone;  // adapter description
  std::string backbone_digest;
  std::vector<Parameter> parameters;  // all-parameters mode only
};

inline json to_json(const Checkpoint& c) {
  json j{{"format", kCheckpointFormat},
         {"task", task_name(c.task)},
         {"soft_prompt",
          {{"init", c.soft_prompt.init}, {"steps", c.soft_prompt.steps}, {"matrix", matrix_to_json(c.soft_prompt.values)}}},
         {"template", to_json(c.spec)},
         {"config", to_json(c.config)},
         {"backbone", c.backbone},
         {"backbone_digest", c.backbone_digest}};
  if (!c.parameters.empty()) {
    json params = json::array();
    for (const auto& p : c.parameters) params.push_back({{"name", p.name}, {"matrix", matrix_to_json(p.value)}});
    j["parameters"] = params;
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != kCheckpointFormat) throw Error("not a checkpoint file (format mismatch)");
  Checkpoint c;
  c.task = parse_task(j.at("task").get<std::string>());
  c.soft_prompt.values = matrix_from_json(j.at("soft_prompt").at("matrix"));
  c.soft_prompt.init = j.at("soft_prompt").value("init", "");
  c.soft_prompt.steps = j.at("soft_prompt").value("steps", std::size_t{0});
  c.spec = template_spec_from_json(j.at("template"));
  c.config = train_config_from_json(j.at("config"));
  c.backbone = j.at("backbone");
  c.backbone_digest = j.at("backbone_digest").get<std::string>();
  if (j.contains("parameters"))
    for (const auto& p : j.at("parameters"))
      c.parameters.push_back({p.at("name").get<std::string>(), matrix_from_json(p.at("matrix"))});
  return c;
}

}  // namespace argpersona
