#pragma once

// A tiny deterministic encoder-decoder used as the reference backbone in
// tests and offline runs. Single-head attention, tanh feed-forward blocks,
// residual connections, sinusoidal positions, word-level tokenizer.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "autograd.hpp"
#include "backbone.hpp"
#include "common.hpp"

namespace argpersona {

struct ToyBackboneConfig {
  std::size_t vocab_size = 256;  // hashed buckets; ignored when `vocabulary` is set
  std::vector<std::string> vocabulary;
  std::size_t dim = 32;
  std::size_t layers = 2;  // per stack, encoder and decoder
  std::size_t ffn_dim = 64;
  double temperature = 1.0;
  std::uint64_t seed = 7;
};

inline nlohmann::json to_json(const ToyBackboneConfig& c) {
  return nlohmann::json{{"vocab_size", c.vocab_size}, {"vocabulary", c.vocabulary}, {"dim", c.dim},
                        {"layers", c.layers},         {"ffn_dim", c.ffn_dim},       {"temperature", c.temperature},
                        {"seed", c.seed}};
}

inline ToyBackboneConfig toy_config_from_json(const nlohmann::json& j) {
  ToyBackboneConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.vocabulary = j.value("vocabulary", c.vocabulary);
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.temperature = j.value("temperature", c.temperature);
  c.seed = j.value("seed", c.seed);
  return c;
}

class ToyBackbone final : public BackboneAdapter {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr TokenId kFirstWord = 3;

  explicit ToyBackbone(ToyBackboneConfig cfg = {}) : cfg_(std::move(cfg)) {
    if (!cfg_.vocabulary.empty()) {
      cfg_.vocab_size = cfg_.vocabulary.size() + kFirstWord;
      for (std::size_t i = 0; i < cfg_.vocabulary.size(); ++i)
        word_ids_.emplace(to_lower(cfg_.vocabulary[i]), static_cast<TokenId>(i) + kFirstWord);
    }
    if (cfg_.vocab_size <= kFirstWord || cfg_.dim == 0 || cfg_.layers == 0 || cfg_.ffn_dim == 0)
      throw ConfigError("toy backbone dimensions must be positive");
    if (!(cfg_.temperature > 0.0)) throw ConfigError("temperature must be positive");
    init_parameters();
  }

  const ToyBackboneConfig& config() const noexcept { return cfg_; }

  std::string name() const override { return "toy-encdec"; }
  std::size_t embedding_dim() const override { return cfg_.dim; }
  std::size_t vocab_size() const override { return cfg_.vocab_size; }

  // Lowercased alphanumeric runs and single punctuation marks.
  std::vector<TokenId> tokenize(std::string_view text) const override {
    std::vector<TokenId> ids;
    std::string cur;
    const auto flush = [&] {
      if (cur.empty()) return;
      ids.push_back(word_id(cur));
      cur.clear();
    };
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isalnum(c) || c >= 0x80) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
        if (!std::isspace(c)) {
          cur.push_back(ch);
          flush();
        }
      }
    }
    flush();
    return ids;
  }

  TokenId word_id(const std::string& word) const {
    if (!word_ids_.empty()) {
      auto it = word_ids_.find(word);
      return it == word_ids_.end() ? kUnk : it->second;
    }
    return static_cast<TokenId>(kFirstWord + fnv1a64(word) % (cfg_.vocab_size - kFirstWord));
  }

  std::vector<double> score(const Matrix& prefix, const std::vector<TokenId>& input,
                            const std::vector<std::vector<TokenId>>& targets) const override {
    Tape tape;
    Bound p = bind(tape, nullptr);
    const Var enc = encode(tape, p, tape.constant(prefix), input, nullptr);
    std::vector<double> out;
    out.reserve(targets.size());
    for (const auto& t : targets) {
      if (t.empty()) throw ContractError("cannot score an empty target sequence");
      const Var logits = decode(tape, p, enc, decoder_inputs(t), nullptr);
      out.push_back(tape.value(tape.log_softmax_pick(logits, t))(0, 0));
    }
    return out;
  }

  double log_prob_and_grad(const Matrix& prefix, const std::vector<TokenId>& input, const std::vector<TokenId>& target,
                           Matrix* prefix_grad, ParameterGradients* param_grads) const override {
    if (target.empty()) throw ContractError("cannot score an empty target sequence");
    if (param_grads && param_grads->size() != params_.size()) {
      param_grads->clear();
      for (const auto& prm : params_) param_grads->push_back(Matrix::Zero(prm.value.rows(), prm.value.cols()));
    }
    Tape tape;
    Bound p = bind(tape, param_grads);
    const Var pre = tape.leaf(prefix, prefix_grad != nullptr);
    Matrix* embed_grad = param_grads ? &(*param_grads)[kEmbedIndex] : nullptr;
    const Var enc = encode(tape, p, pre, input, embed_grad);
    const Var logits = decode(tape, p, enc, decoder_inputs(target), embed_grad);
    const Var lp = tape.log_softmax_pick(logits, target);
    tape.backward(lp);
    if (prefix_grad && tape.requires_grad(pre) && tape.grad(pre).size()) *prefix_grad += tape.grad(pre);
    if (param_grads) {
      for (std::size_t i = 0; i < params_.size(); ++i) {
        if (i == kEmbedIndex) continue;
        const Var v = p.vars[i];
        if (tape.grad(v).size()) (*param_grads)[i] += tape.grad(v);
      }
    }
    return tape.value(lp)(0, 0);
  }

  std::vector<double> next_token_log_probs(const Matrix& prefix, const std::vector<TokenId>& input,
                                           const std::vector<TokenId>& target_prefix) const override {
    Tape tape;
    Bound p = bind(tape, nullptr);
    const Var enc = encode(tape, p, tape.constant(prefix), input, nullptr);
    std::vector<TokenId> dec{kBos};
    dec.insert(dec.end(), target_prefix.begin(), target_prefix.end());
    const Var logits = decode(tape, p, enc, dec, nullptr);
    const auto& z = tape.value(logits);
    const Eigen::Index last = z.rows() - 1;
    const double m = z.row(last).maxCoeff();
    const double lse = m + std::log((z.row(last).array() - m).exp().sum());
    std::vector<double> out(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index j = 0; j < z.cols(); ++j) out[static_cast<std::size_t>(j)] = z(last, j) - lse;
    return out;
  }

  const Matrix& token_embeddings() const override { return params_[kEmbedIndex].value; }
  const std::vector<Parameter>& parameters() const override { return params_; }
  std::vector<Parameter>& mutable_parameters() override { return params_; }

  // Parameter by name; throws LookupError.
  Matrix& parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.value;
    throw LookupError("no parameter named '" + name + "'");
  }

  nlohmann::json describe() const override {
    return nlohmann::json{{"name", name()}, {"config", to_json(cfg_)}, {"digest", digest()}};
  }

 private:
  static constexpr std::size_t kEmbedIndex = 0;

  // Parameters placed on one tape, indexed like params_ (embed is gathered).
  struct Bound {
    std::vector<Var> vars;
  };

  struct AttnIdx {
    std::size_t wq, wk, wv, wo;
  };
  struct FfnIdx {
    std::size_t w1, b1, w2, b2;
  };

  std::size_t add_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * standard_normal(rng);
    params_.push_back({name, std::move(m)});
    return params_.size() - 1;
  }

  AttnIdx add_attention(const std::string& prefix, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(cfg_.dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
    return {add_param(prefix + ".wq", d, d, s, rng), add_param(prefix + ".wk", d, d, s, rng),
            add_param(prefix + ".wv", d, d, s, rng), add_param(prefix + ".wo", d, d, s, rng)};
  }

  FfnIdx add_ffn(const std::string& prefix, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(cfg_.dim);
    const auto h = static_cast<Eigen::Index>(cfg_.ffn_dim);
    return {add_param(prefix + ".w1", d, h, 1.0 / std::sqrt(static_cast<double>(d)), rng),
            add_param(prefix + ".b1", 1, h, 0.0, rng),
            add_param(prefix + ".w2", h, d, 1.0 / std::sqrt(static_cast<double>(h)), rng),
            add_param(prefix + ".b2", 1, d, 0.0, rng)};
  }

  void init_parameters() {
    Rng rng(derive_seed(cfg_.seed, "toy-backbone"));
    const auto d = static_cast<Eigen::Index>(cfg_.dim);
    const auto v = static_cast<Eigen::Index>(cfg_.vocab_size);
    add_param("embed", v, d, 1.0, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const auto pre = "enc" + std::to_string(l);
      enc_attn_.push_back(add_attention(pre + ".self", rng));
      enc_ffn_.push_back(add_ffn(pre + ".ffn", rng));
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const auto pre = "dec" + std::to_string(l);
      dec_self_.push_back(add_attention(pre + ".self", rng));
      dec_cross_.push_back(add_attention(pre + ".cross", rng));
      dec_ffn_.push_back(add_ffn(pre + ".ffn", rng));
    }
    lm_head_ = add_param("lm_head", d, v, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    lm_bias_ = add_param("lm_bias", 1, v, 0.0, rng);
  }

  Bound bind(Tape& tape, const ParameterGradients* grads) const {
    Bound b;
    b.vars.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (i == kEmbedIndex) continue;
      b.vars[i] = tape.leaf(params_[i].value, grads != nullptr);
    }
    return b;
  }

  Matrix positions(std::size_t n) const {
    Matrix pe(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg_.dim));
    for (std::size_t pos = 0; pos < n; ++pos)
      for (std::size_t i = 0; i < cfg_.dim; ++i) {
        const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(cfg_.dim));
        pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) =
            0.5 * (i % 2 == 0 ? std::sin(static_cast<double>(pos) * rate) : std::cos(static_cast<double>(pos) * rate));
      }
    return pe;
  }

  Var attention(Tape& t, const Bound& p, const AttnIdx& w, Var xq, Var xkv, bool causal) const {
    const Var q = t.matmul(xq, p.vars[w.wq]);
    const Var k = t.matmul(xkv, p.vars[w.wk]);
    const Var v = t.matmul(xkv, p.vars[w.wv]);
    const Var s = t.scale(t.matmul_bt(q, k), 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
    const Var a = t.softmax_rows(s, causal);
    return t.matmul(t.matmul(a, v), p.vars[w.wo]);
  }

  Var ffn(Tape& t, const Bound& p, const FfnIdx& w, Var x) const {
    const Var h = t.tanh(t.add_row(t.matmul(x, p.vars[w.w1]), p.vars[w.b1]));
    return t.add_row(t.matmul(h, p.vars[w.w2]), p.vars[w.b2]);
  }

  Var encode(Tape& t, const Bound& p, Var prefix, const std::vector<TokenId>& input, Matrix* embed_grad) const {
    Var x = t.gather_rows(params_[kEmbedIndex].value, input, embed_grad);
    if (t.value(prefix).rows() > 0) {
      if (static_cast<std::size_t>(t.value(prefix).cols()) != cfg_.dim)
        throw ContractError("prefix width does not match the embedding dimension");
      x = input.empty() ? prefix : t.concat_rows(prefix, x);
    }
    const auto n = static_cast<std::size_t>(t.value(x).rows());
    if (n == 0) throw ContractError("encoder input is empty");
    x = t.add(x, t.constant(positions(n)));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      x = t.add(x, attention(t, p, enc_attn_[l], x, x, false));
      x = t.add(x, ffn(t, p, enc_ffn_[l], x));
    }
    return x;
  }

  static std::vector<TokenId> decoder_inputs(const std::vector<TokenId>& target) {
    std::vector<TokenId> dec{kBos};
    dec.insert(dec.end(), target.begin(), target.end() - 1);
    return dec;
  }

  Var decode(Tape& t, const Bound& p, Var enc, const std::vector<TokenId>& dec_ids, Matrix* embed_grad) const {
    Var y = t.gather_rows(params_[kEmbedIndex].value, dec_ids, embed_grad);
    y = t.add(y, t.constant(positions(dec_ids.size())));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      y = t.add(y, attention(t, p, dec_self_[l], y, y, true));
      y = t.add(y, attention(t, p, dec_cross_[l], y, enc, false));
      y = t.add(y, ffn(t, p, dec_ffn_[l], y));
    }
    Var logits = t.add_row(t.matmul(y, p.vars[lm_head_]), p.vars[lm_bias_]);
    if (cfg_.temperature != 1.0) logits = t.scale(logits, 1.0 / cfg_.temperature);
    return logits;
  }

  ToyBackboneConfig cfg_;
  std::unordered_map<std::string, TokenId> word_ids_;
  std::vector<Parameter> params_;
  std::vector<AttnIdx> enc_attn_, dec_self_, dec_cross_;
  std::vector<FfnIdx> enc_ffn_, dec_ffn_;
  std::size_t lm_head_ = 0, lm_bias_ = 0;
};

}  // namespace argpersona
