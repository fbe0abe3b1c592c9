#include "ulab/model.hpp"

#include <cmath>
#include <map>
#include <random>

#include <doctest.h>

#include "support/table_model.hpp"
#include "support/test_util.hpp"
#include "ulab/error.hpp"
#include "ulab/io.hpp"
#include "ulab/pipeline.hpp"

using namespace ulab;
using ulab::testing::TableModel;
using ulab::testing::TempDir;

namespace {

ModelConfig tiny_config(int vocab = 12, std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.context_length = 16;
  cfg.vocab_size = vocab;
  cfg.seed = seed;
  return cfg;
}

std::vector<double> forward_values(const TransformerLM& m, std::span<const TokenId> ids) {
  Graph g;
  NoGradGuard ng(g);
  Tensor logits = m.forward(g, ids);
  return {logits.values().begin(), logits.values().end()};
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK(cfg.head_dim() == 8);
  cfg.n_heads = 5;  // 16 % 5 != 0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.context_length = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  ModelConfig deskscale;
  deskscale.vocab_size = 100;
  CHECK(deskscale.head_dim() == 16);  // d_model 64, 4 heads
  deskscale.validate();
}

TEST_CASE("init is deterministic per seed") {
  TransformerLM a = TransformerLM::init(tiny_config(12, 77));
  TransformerLM b = TransformerLM::init(tiny_config(12, 77));
  TransformerLM c = TransformerLM::init(tiny_config(12, 78));
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_diff_seed = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::int64_t j = 0; j < pa[i].numel(); ++j) {
      all_equal = all_equal &&
                  pa[i].at(static_cast<int>(j)) == pb[i].at(static_cast<int>(j));
      any_diff_seed = any_diff_seed ||
                      pa[i].at(static_cast<int>(j)) != pc[i].at(static_cast<int>(j));
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("fresh-model logits are finite and near zero mean across seeds") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<TokenId> tok(0, 11);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TransformerLM m = TransformerLM::init(tiny_config(12, seed));
    std::vector<TokenId> ids{tok(rng), tok(rng), tok(rng), tok(rng)};
    std::vector<double> logits = forward_values(m, ids);
    double mean = 0.0;
    for (double v : logits) {
      REQUIRE(std::isfinite(v));
      mean += v;
    }
    mean /= static_cast<double>(logits.size());
    CHECK(std::abs(mean) < 0.5);
  }
}

TEST_CASE("forward shapes and length guard") {
  TransformerLM m = TransformerLM::init(tiny_config());
  Graph g;
  Tensor logits = m.forward(g, std::vector<TokenId>{5});
  CHECK(logits.shape() == Shape{1, 12});

  std::vector<TokenId> too_long(17, 1);
  CHECK_THROWS_AS(m.forward(g, too_long), LengthError);
  CHECK_THROWS_AS(m.forward(g, std::vector<TokenId>{12}), IndexError);
}

TEST_CASE("causality: suffix perturbation leaves prefix logits bit-identical") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<TokenId> tok(0, 11);
  std::uniform_int_distribution<int> len(2, 12);
  TransformerLM m = TransformerLM::init(tiny_config(12, 5));
  const int vocab = 12;
  for (int trial = 0; trial < 25; ++trial) {
    const int t = len(rng);
    std::vector<TokenId> ids(static_cast<std::size_t>(t));
    for (TokenId& id : ids) id = tok(rng);
    std::uniform_int_distribution<int> cut_dist(1, t - 1);
    const int cut = cut_dist(rng);
    std::vector<TokenId> perturbed = ids;
    for (int i = cut; i < t; ++i) perturbed[static_cast<std::size_t>(i)] = tok(rng);

    std::vector<double> base = forward_values(m, ids);
    std::vector<double> alt = forward_values(m, perturbed);
    for (int i = 0; i < cut * vocab; ++i) {
      REQUIRE(base[static_cast<std::size_t>(i)] == alt[static_cast<std::size_t>(i)]);
    }
  }
}

TEST_CASE("prefix embedded in a longer input yields identical leading logits") {
  TransformerLM m = TransformerLM::init(tiny_config(12, 9));
  std::vector<TokenId> short_ids{3, 7};
  std::vector<TokenId> long_ids{3, 7, 1, 4, 9};
  std::vector<double> a = forward_values(m, short_ids);
  std::vector<double> b = forward_values(m, long_ids);
  for (int i = 0; i < 12; ++i) CHECK(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);
}

TEST_CASE("zeroed token embeddings give exactly uniform next-token logprobs") {
  TransformerLM m = TransformerLM::init(tiny_config(12, 2));
  for (double& v : m.token_embedding().mutable_values()) v = 0.0;
  std::vector<double> lp = m.next_token_logprobs(std::vector<TokenId>{Vocabulary::kBos, 5});
  for (double v : lp) CHECK(v == doctest::Approx(-std::log(12.0)).epsilon(1e-14));
}

TEST_CASE("next_token_logprobs normalizes and mean_logprob matches tables") {
  TableModel table(10);
  table.set(4, 5, 0.7);
  std::vector<double> lp = table.next_token_logprobs(std::vector<TokenId>{Vocabulary::kBos, 4});
  CHECK(lp[5] == doctest::Approx(std::log(0.7)).epsilon(1e-14));

  // Normalization invariant for both implementations.
  double total = 0.0;
  for (double v : lp) total += std::exp(v);
  CHECK(std::abs(total - 1.0) < 1e-9);

  TransformerLM m = TransformerLM::init(tiny_config(12, 4));
  std::vector<double> mlp = m.next_token_logprobs(std::vector<TokenId>{Vocabulary::kBos, 3, 6});
  total = 0.0;
  for (double v : mlp) total += std::exp(v);
  CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("mean_logprob against a hand-computed table") {
  TableModel table(8);
  // P(5 | BOS) = 0.5, P(6 | 5) = 0.25, P(7 | 6) = 0.125.
  table.set(Vocabulary::kBos, 5, 0.5);
  table.set(5, 6, 0.25);
  table.set(6, 7, 0.125);
  TokenSequence seq;
  seq.ids = {5, 6, 7};
  const double expected = (std::log(0.5) + std::log(0.25) + std::log(0.125)) / 3.0;
  CHECK(std::abs(mean_logprob(table, seq) - expected) < 1e-12);

  // Purity: a second call reproduces the value bit for bit.
  CHECK(mean_logprob(table, seq) == mean_logprob(table, seq));

  TokenSequence empty;
  CHECK_THROWS_AS(mean_logprob(table, empty), InputError);
}

TEST_CASE("uniform model scores -ln V everywhere and perplexity V") {
  TableModel uniform = ulab::testing::uniform_model(50);
  TokenSequence seq;
  seq.ids = {1, 2, 3, 4};
  CHECK(mean_logprob(uniform, seq) == doctest::Approx(-std::log(50.0)).epsilon(1e-14));

  std::vector<TokenSequence> corpus{seq, seq};
  CHECK(perplexity(uniform, corpus) == doctest::Approx(50.0).epsilon(1e-12));

  std::vector<TokenSequence> none;
  CHECK_THROWS_AS(perplexity(uniform, none), InputError);
}

TEST_CASE("perplexity on a table-model corpus matches the hand value") {
  TableModel table(6);
  table.set(Vocabulary::kBos, 4, 0.5);
  table.set(4, 5, 0.8);
  TokenSequence s1;
  s1.ids = {4, 5};
  TokenSequence s2;
  s2.ids = {4};
  std::vector<TokenSequence> corpus{s1, s2};
  // NLL = -(ln .5 + ln .8) - ln .5 over 3 tokens.
  const double expected = std::exp(-(std::log(0.5) + std::log(0.8) + std::log(0.5)) / 3.0);
  CHECK(std::abs(perplexity(table, corpus) - expected) < 1e-9);
}

TEST_CASE("gradient flows only to positions at or before the loss target") {
  TransformerLM m = TransformerLM::init(tiny_config(12, 6));
  std::vector<TokenId> ids{2, 9, 4, 7, 1};
  Graph g;
  ForwardTrace trace = m.forward_traced(g, ids);
  // Cross-entropy on logits row 2 (prediction of the token after position 2).
  std::vector<int> rows{2};
  std::vector<TokenId> targets{ids[3]};
  Tensor loss = g.nll_rows(trace.logits, targets, rows);
  g.backward(loss);
  REQUIRE(trace.input_embed.has_grad());
  const int d = m.config().d_model;
  auto grad = trace.input_embed.grad();
  for (int pos = 0; pos < 5; ++pos) {
    double norm = 0.0;
    for (int c = 0; c < d; ++c) norm += std::abs(grad[static_cast<std::size_t>(pos * d + c)]);
    if (pos <= 2) {
      CHECK(norm > 0.0);
    } else {
      CHECK(norm == 0.0);
    }
  }
}

TEST_CASE("embedding similarity bounds and Monte Carlo spread") {
  TransformerLM m = TransformerLM::init(tiny_config(12, 8));
  CHECK(m.embedding_similarity(5, 5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(m.embedding_similarity(0, 99), IndexError);

  // At d_model 64 random embedding pairs are nearly orthogonal.
  ModelConfig big;
  big.vocab_size = 40;
  int below = 0, total = 0;
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<TokenId> tok(0, 39);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    big.seed = seed;
    TransformerLM bm = TransformerLM::init(big);
    for (int k = 0; k < 10; ++k) {
      TokenId a = tok(rng), b = tok(rng);
      if (a == b) continue;
      double cos = bm.embedding_similarity(a, b);
      CHECK(cos >= -1.0);
      CHECK(cos <= 1.0);
      below += std::abs(cos) < 0.5 ? 1 : 0;
      ++total;
    }
  }
  CHECK(below >= total * 99 / 100);
}

TEST_CASE("trained model recovers bigram statistics") {
  // Corpus of two-token sentences with a deterministic bigram map; the
  // count-based oracle is the argmax of observed successors.
  const int n_words = 6;
  std::vector<std::string> words{"ka", "lo", "mu", "ne", "pi", "ro"};
  std::map<int, int> successor{{0, 3}, {1, 4}, {2, 5}, {3, 0}, {4, 2}, {5, 1}};
  std::vector<std::string> corpus;
  for (int rep = 0; rep < 40; ++rep) {
    for (int w = 0; w < n_words; ++w) {
      corpus.push_back(words[static_cast<std::size_t>(w)] + " " +
                       words[static_cast<std::size_t>(successor[w])]);
    }
  }
  Vocabulary vocab = Vocabulary::build(corpus, 1);
  ModelConfig mc = tiny_config(vocab.size(), 31);
  TransformerLM m = TransformerLM::init(mc);
  std::vector<TokenSequence> encoded;
  for (const std::string& line : corpus) encoded.push_back(vocab.encode(line));

  PretrainConfig pc;
  pc.steps = 250;
  pc.batch_size = 8;
  pc.learning_rate = 3e-3;
  pc.seed = 7;
  const double ppl_before = perplexity(m, encoded);
  pretrain_lm(m, encoded, pc, nullptr);
  const double ppl_after = perplexity(m, encoded);
  CHECK(ppl_after < ppl_before);

  int agree = 0;
  for (const auto& [w, next] : successor) {
    std::vector<TokenId> prefix{Vocabulary::kBos, vocab.id_or_unk(words[static_cast<std::size_t>(w)])};
    std::vector<double> lp = m.next_token_logprobs(prefix);
    TokenId argmax = 0;
    for (TokenId v = 1; v < vocab.size(); ++v) {
      if (lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(argmax)]) argmax = v;
    }
    agree += argmax == vocab.id_or_unk(words[static_cast<std::size_t>(next)]) ? 1 : 0;
  }
  CHECK(agree * 10 >= n_words * 9);  // >= 90% of contexts
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  TempDir dir("ckpt");
  TransformerLM m = TransformerLM::init(tiny_config(12, 123));
  const auto path = dir / "model.ckpt";
  save_checkpoint(m, path);
  TransformerLM loaded = load_checkpoint(path);

  auto pa = m.parameters(), pb = loaded.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].shape() == pb[i].shape());
    for (std::int64_t j = 0; j < pa[i].numel(); ++j) {
      REQUIRE(pa[i].at(static_cast<int>(j)) == pb[i].at(static_cast<int>(j)));
    }
  }
  // Saving the loaded model reproduces the file bytes exactly.
  save_checkpoint(loaded, dir / "again.ckpt");
  CHECK(read_text_file(path) == read_text_file(dir / "again.ckpt"));

  // Corruption is detected.
  std::string bytes = read_text_file(path);
  bytes[3] = 'X';
  write_text_file_atomic(dir / "bad.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ParseError);
  write_text_file_atomic(dir / "trunc.ckpt", bytes.substr(0, 100));
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), ParseError);
}
