#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "ulab/tensor.hpp"
#include "ulab/text.hpp"

namespace ulab {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int context_length = 64;
  int vocab_size = 0;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on violation
  int head_dim() const { return d_model / n_heads; }
};

// Anything that can score the next token given a prefix of ids. The
// prefix includes BOS; callers prepend it. Log-probs exponentiate and
// sum to one.
class ScoringModel {
 public:
  virtual ~ScoringModel() = default;
  virtual int vocab_size() const = 0;
  virtual std::vector<double> next_token_logprobs(std::span<const TokenId> prefix) const = 0;

  // log P(ids[t] | BOS, ids[<t]) for every t. The default recomputes per
  // prefix; implementations with cheaper batch paths override.
  virtual std::vector<double> sentence_logprobs(std::span<const TokenId> ids) const;
};

// Mean per-token log-likelihood of the sentence, BOS-conditioned.
double mean_logprob(const ScoringModel& model, const TokenSequence& seq);

// exp(total NLL / total token count) across the corpus.
double perplexity(const ScoringModel& model, std::span<const TokenSequence> corpus);

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gain, ln2_bias;
  Tensor w_ff1, w_ff2;
};

// Products of forward needed by gradient-flow tests: the summed
// token+position embedding activation alongside the logits.
struct ForwardTrace {
  Tensor logits;       // [T, vocab]
  Tensor input_embed;  // [T, d_model]
};

// Pre-norm causal decoder. The output head is the transposed token
// embedding (tied weights), which makes embedding-space effects of
// unlearning observable in a single matrix.
class TransformerLM : public ScoringModel {
 public:
  // Weights ~ normal(0, 0.02), deterministic per seed.
  static TransformerLM init(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  int vocab_size() const override { return cfg_.vocab_size; }

  Tensor forward(Graph& graph, std::span<const TokenId> ids) const;
  ForwardTrace forward_traced(Graph& graph, std::span<const TokenId> ids) const;

  std::vector<double> next_token_logprobs(std::span<const TokenId> prefix) const override;
  std::vector<double> sentence_logprobs(std::span<const TokenId> ids) const override;

  // Cosine similarity of two token-embedding rows.
  double embedding_similarity(TokenId a, TokenId b) const;

  // Every weight tensor, in checkpoint order.
  std::vector<Tensor> parameters();
  std::vector<Tensor> parameters() const;

  TransformerLM clone() const;  // deep copy (snapshot for evaluation)

  Tensor& token_embedding() { return tok_emb_; }
  const Tensor& token_embedding() const { return tok_emb_; }

 private:
  TransformerLM() = default;

  ModelConfig cfg_;
  Tensor tok_emb_;  // [vocab, d_model]
  Tensor pos_emb_;  // [context, d_model]
  std::vector<LayerWeights> layers_;
  Tensor lnf_gain_, lnf_bias_;

  friend void save_checkpoint(const TransformerLM&, const std::filesystem::path&);
  friend TransformerLM load_checkpoint(const std::filesystem::path&);
};

// Binary checkpoint: magic "ULAB0001", seven little-endian int64 header
// fields (n_layers, n_heads, d_model, d_ff, context_length, vocab_size,
// seed), then every parameter flat, row-major, little-endian float64,
// in parameters() order. Roundtrip is bit-exact.
void save_checkpoint(const TransformerLM& model, const std::filesystem::path& path);
TransformerLM load_checkpoint(const std::filesystem::path& path);

}  // namespace ulab
