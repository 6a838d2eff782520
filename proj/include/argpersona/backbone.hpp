#pragma once

// Interface between the tuner and a frozen sequence-to-sequence backbone.

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autograd.hpp"
#include "common.hpp"

namespace argpersona {

struct Parameter {
  std::string name;
  Matrix value;
};

// One gradient matrix per backbone parameter, aligned with parameters().
using ParameterGradients = std::vector<Matrix>;

class BackboneAdapter {
 public:
  virtual ~BackboneAdapter() = default;

  virtual std::string name() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual std::size_t vocab_size() const = 0;

  virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;

  // Total teacher-forced log-probability of each target sequence given the
  // continuous block `prefix` (L x d) prepended to the embedded input.
  virtual std::vector<double> score(const Matrix& prefix, const std::vector<TokenId>& input,
                                    const std::vector<std::vector<TokenId>>& targets) const = 0;

  // Log-probability of one target plus its gradient. `prefix_grad` (L x d)
  // and `param_grads` (aligned with parameters()) are accumulated into when
  // non-null.
  virtual double log_prob_and_grad(const Matrix& prefix, const std::vector<TokenId>& input,
                                   const std::vector<TokenId>& target, Matrix* prefix_grad,
                                   ParameterGradients* param_grads) const = 0;

  // Log-probabilities over the whole vocabulary for the token following
  // `target_prefix` at the answer position.
  virtual std::vector<double> next_token_log_probs(const Matrix& prefix, const std::vector<TokenId>& input,
                                                   const std::vector<TokenId>& target_prefix) const = 0;

  // Rows of the input embedding table, for soft-prompt initialization.
  virtual const Matrix& token_embeddings() const = 0;

  virtual const std::vector<Parameter>& parameters() const = 0;
  virtual std::vector<Parameter>& mutable_parameters() = 0;

  virtual nlohmann::json describe() const = 0;

  // sha256 over parameter names, shapes and raw bytes.
  std::string digest() const {
    std::string buf;
    for (const auto& p : parameters()) {
      buf += p.name + ":" + std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()) + ";";
      buf.append(reinterpret_cast<const char*>(p.value.data()),
                 static_cast<std::size_t>(p.value.size()) * sizeof(double));
    }
    return sha256_hex(buf);
  }
};

}  // namespace argpersona
