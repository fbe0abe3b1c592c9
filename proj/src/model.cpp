#include "ulab/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "ulab/error.hpp"
#include "ulab/io.hpp"

namespace ulab {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
  if (n_heads < 1) throw ConfigError("model: n_heads must be >= 1");
  if (d_model < 1 || d_ff < 1) throw ConfigError("model: d_model and d_ff must be >= 1");
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (context_length < 2) throw ConfigError("model: context_length must be >= 2");
  if (vocab_size < Vocabulary::kReservedCount) {
    throw ConfigError("model: vocab_size must cover the reserved tokens");
  }
}

std::vector<double> ScoringModel::sentence_logprobs(std::span<const TokenId> ids) const {
  if (ids.empty()) throw InputError("sentence_logprobs: empty sequence");
  std::vector<TokenId> prefix{Vocabulary::kBos};
  std::vector<double> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    std::vector<double> lp = next_token_logprobs(prefix);
    if (id < 0 || id >= static_cast<TokenId>(lp.size())) {
      throw IndexError("sentence_logprobs: token id " + std::to_string(id) + " out of range");
    }
    out.push_back(lp[static_cast<std::size_t>(id)]);
    prefix.push_back(id);
  }
  return out;
}

double mean_logprob(const ScoringModel& model, const TokenSequence& seq) {
  if (seq.ids.empty()) throw InputError("mean_logprob: empty sequence");
  std::vector<double> lp = model.sentence_logprobs(seq.ids);
  double total = 0.0;
  for (double v : lp) total += v;
  return total / static_cast<double>(lp.size());
}

double perplexity(const ScoringModel& model, std::span<const TokenSequence> corpus) {
  if (corpus.empty()) throw InputError("perplexity: empty corpus");
  double total_nll = 0.0;
  long total_tokens = 0;
  for (const TokenSequence& seq : corpus) {
    for (double v : model.sentence_logprobs(seq.ids)) total_nll -= v;
    total_tokens += seq.length();
  }
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

// ---------------------------------------------------------------------------
// TransformerLM

TransformerLM TransformerLM::init(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  auto randn = [&](Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.mutable_values()) v = dist(rng);
    return t;
  };

  TransformerLM m;
  m.cfg_ = cfg;
  m.tok_emb_ = randn({cfg.vocab_size, cfg.d_model});
  m.pos_emb_ = randn({cfg.context_length, cfg.d_model});
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerWeights w;
    w.ln1_gain = Tensor::full({cfg.d_model}, 1.0, true);
    w.ln1_bias = Tensor::zeros({cfg.d_model}, true);
    w.wq = randn({cfg.d_model, cfg.d_model});
    w.wk = randn({cfg.d_model, cfg.d_model});
    w.wv = randn({cfg.d_model, cfg.d_model});
    w.wo = randn({cfg.d_model, cfg.d_model});
    w.ln2_gain = Tensor::full({cfg.d_model}, 1.0, true);
    w.ln2_bias = Tensor::zeros({cfg.d_model}, true);
    w.w_ff1 = randn({cfg.d_model, cfg.d_ff});
    w.w_ff2 = randn({cfg.d_ff, cfg.d_model});
    m.layers_.push_back(std::move(w));
  }
  m.lnf_gain_ = Tensor::full({cfg.d_model}, 1.0, true);
  m.lnf_bias_ = Tensor::zeros({cfg.d_model}, true);
  return m;
}

namespace {

// Additive causal mask: 0 on and below the diagonal, -1e30 above. Large
// enough that exp underflows to exactly zero after max subtraction,
// finite so tensor values stay NaN/Inf-free.
Tensor causal_mask(int t) {
  Tensor mask = Tensor::zeros({t, t});
  auto v = mask.mutable_values();
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) v[static_cast<std::size_t>(i) * t + j] = -1e30;
  return mask;
}

}  // namespace

ForwardTrace TransformerLM::forward_traced(Graph& g, std::span<const TokenId> ids) const {
  const int t = static_cast<int>(ids.size());
  if (t == 0) throw InputError("forward: empty input");
  if (t > cfg_.context_length) {
    throw LengthError("forward: sequence length " + std::to_string(t) +
                      " exceeds context_length " + std::to_string(cfg_.context_length));
  }
  for (TokenId id : ids) {
    if (id < 0 || id >= cfg_.vocab_size) {
      throw IndexError("forward: token id " + std::to_string(id) + " out of range [0," +
                       std::to_string(cfg_.vocab_size) + ")");
    }
  }

  std::vector<TokenId> positions(static_cast<std::size_t>(t));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = g.add(g.gather_rows(tok_emb_, ids), g.gather_rows(pos_emb_, positions));
  Tensor input_embed = x;

  const int dh = cfg_.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor mask = causal_mask(t);

  for (const LayerWeights& w : layers_) {
    Tensor a = g.layer_norm(x, w.ln1_gain, w.ln1_bias);
    Tensor q = g.matmul(a, w.wq);
    Tensor k = g.matmul(a, w.wk);
    Tensor v = g.matmul(a, w.wv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const int c0 = h * dh, c1 = c0 + dh;
      Tensor qh = g.slice_cols(q, c0, c1);
      Tensor kh = g.slice_cols(k, c0, c1);
      Tensor vh = g.slice_cols(v, c0, c1);
      Tensor scores = g.add(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dh), mask);
      heads.push_back(g.matmul(g.softmax(scores), vh));
    }
    Tensor attn = g.matmul(g.concat_cols(heads), w.wo);
    x = g.add(x, attn);

    Tensor b = g.layer_norm(x, w.ln2_gain, w.ln2_bias);
    Tensor ff = g.matmul(g.gelu(g.matmul(b, w.w_ff1)), w.w_ff2);
    x = g.add(x, ff);
  }

  Tensor xn = g.layer_norm(x, lnf_gain_, lnf_bias_);
  Tensor logits = g.matmul(xn, g.transpose(tok_emb_));
  return {logits, input_embed};
}

Tensor TransformerLM::forward(Graph& g, std::span<const TokenId> ids) const {
  return forward_traced(g, ids).logits;
}

std::vector<double> TransformerLM::next_token_logprobs(std::span<const TokenId> prefix) const {
  if (prefix.empty()) throw InputError("next_token_logprobs: empty prefix");
  Graph g;
  NoGradGuard no_grad(g);
  Tensor logits = forward(g, prefix);
  Tensor lsm = g.log_softmax(logits);
  const int t = static_cast<int>(prefix.size());
  std::vector<double> out(static_cast<std::size_t>(cfg_.vocab_size));
  for (int v = 0; v < cfg_.vocab_size; ++v) out[static_cast<std::size_t>(v)] = lsm.at(t - 1, v);
  return out;
}

std::vector<double> TransformerLM::sentence_logprobs(std::span<const TokenId> ids) const {
  if (ids.empty()) throw InputError("sentence_logprobs: empty sequence");
  std::vector<TokenId> input;
  input.reserve(ids.size() + 1);
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), ids.begin(), ids.end());
  Graph g;
  NoGradGuard no_grad(g);
  Tensor lsm = g.log_softmax(forward(g, input));
  // Row t predicts input[t+1] == ids[t].
  std::vector<double> out;
  out.reserve(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    out.push_back(lsm.at(static_cast<int>(t), ids[t]));
  }
  return out;
}

double TransformerLM::embedding_similarity(TokenId a, TokenId b) const {
  if (a < 0 || a >= cfg_.vocab_size || b < 0 || b >= cfg_.vocab_size) {
    throw IndexError("embedding_similarity: token id out of range");
  }
  const int d = cfg_.d_model;
  const double* ra = tok_emb_.values().data() + static_cast<std::size_t>(a) * d;
  const double* rb = tok_emb_.values().data() + static_cast<std::size_t>(b) * d;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < d; ++i) {
    dot += ra[i] * rb[i];
    na += ra[i] * ra[i];
    nb += rb[i] * rb[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<Tensor> TransformerLM::parameters() {
  std::vector<Tensor> out{tok_emb_, pos_emb_};
  for (LayerWeights& w : layers_) {
    out.push_back(w.ln1_gain);
    out.push_back(w.ln1_bias);
    out.push_back(w.wq);
    out.push_back(w.wk);
    out.push_back(w.wv);
    out.push_back(w.wo);
    out.push_back(w.ln2_gain);
    out.push_back(w.ln2_bias);
    out.push_back(w.w_ff1);
    out.push_back(w.w_ff2);
  }
  out.push_back(lnf_gain_);
  out.push_back(lnf_bias_);
  return out;
}

std::vector<Tensor> TransformerLM::parameters() const {
  return const_cast<TransformerLM*>(this)->parameters();
}

TransformerLM TransformerLM::clone() const {
  TransformerLM m;
  m.cfg_ = cfg_;
  m.tok_emb_ = tok_emb_.copy();
  m.pos_emb_ = pos_emb_.copy();
  for (const LayerWeights& w : layers_) {
    LayerWeights c;
    c.ln1_gain = w.ln1_gain.copy();
    c.ln1_bias = w.ln1_bias.copy();
    c.wq = w.wq.copy();
    c.wk = w.wk.copy();
    c.wv = w.wv.copy();
    c.wo = w.wo.copy();
    c.ln2_gain = w.ln2_gain.copy();
    c.ln2_bias = w.ln2_bias.copy();
    c.w_ff1 = w.w_ff1.copy();
    c.w_ff2 = w.w_ff2.copy();
    m.layers_.push_back(std::move(c));
  }
  m.lnf_gain_ = lnf_gain_.copy();
  m.lnf_bias_ = lnf_bias_.copy();
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[8] = {'U', 'L', 'A', 'B', '0', '0', '0', '1'};

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const std::string& data, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[offset + static_cast<std::size_t>(i)]))
         << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const TransformerLM& model, const std::filesystem::path& path) {
  const ModelConfig& cfg = model.config();
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  for (std::int64_t field : {static_cast<std::int64_t>(cfg.n_layers),
                             static_cast<std::int64_t>(cfg.n_heads),
                             static_cast<std::int64_t>(cfg.d_model),
                             static_cast<std::int64_t>(cfg.d_ff),
                             static_cast<std::int64_t>(cfg.context_length),
                             static_cast<std::int64_t>(cfg.vocab_size)}) {
    append_u64_le(out, static_cast<std::uint64_t>(field));
  }
  append_u64_le(out, cfg.seed);
  for (const Tensor& p : model.parameters()) {
    for (double v : p.values()) append_u64_le(out, std::bit_cast<std::uint64_t>(v));
  }
  write_text_file_atomic(path, out);
}

TransformerLM load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_text_file(path);
  if (data.size() < sizeof(kMagic) + 7 * 8 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint " + path.string() + ": bad magic or truncated header");
  }
  std::size_t off = sizeof(kMagic);
  auto next_i64 = [&] {
    std::int64_t v = static_cast<std::int64_t>(read_u64_le(data, off));
    off += 8;
    return v;
  };
  ModelConfig cfg;
  cfg.n_layers = static_cast<int>(next_i64());
  cfg.n_heads = static_cast<int>(next_i64());
  cfg.d_model = static_cast<int>(next_i64());
  cfg.d_ff = static_cast<int>(next_i64());
  cfg.context_length = static_cast<int>(next_i64());
  cfg.vocab_size = static_cast<int>(next_i64());
  cfg.seed = read_u64_le(data, off);
  off += 8;
  cfg.validate();

  TransformerLM model = TransformerLM::init(cfg);
  std::vector<Tensor> params = model.parameters();
  std::size_t total = 0;
  for (const Tensor& p : params) total += static_cast<std::size_t>(p.numel());
  if (data.size() != off + total * 8) {
    throw ParseError("checkpoint " + path.string() + ": expected " +
                     std::to_string(off + total * 8) + " bytes, file has " +
                     std::to_string(data.size()));
  }
  for (Tensor& p : params) {
    for (double& v : p.mutable_values()) {
      v = std::bit_cast<double>(read_u64_le(data, off));
      off += 8;
    }
  }
  return model;
}

}  // namespace ulab
