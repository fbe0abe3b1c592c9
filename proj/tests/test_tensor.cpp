#include "ulab/tensor.hpp"

#include <cmath>
#include <random>

#include <doctest.h>

#include "support/finite_diff.hpp"
#include "support/op_suite.hpp"
#include "ulab/error.hpp"

using namespace ulab;
using namespace ulab::testing;

namespace {

// Independent triple-loop product, no shared code with Graph::matmul.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        out[static_cast<std::size_t>(i) * n + j] += a.at(i, p) * b.at(p, j);
  return out;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  Graph g;
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor prod = g.matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(prod.at(i) == a.at(i));

  Tensor x = Tensor::from_values({1, 1}, {2});
  Tensor y = Tensor::from_values({1, 1}, {3});
  CHECK(g.matmul(x, y).at(0) == 6.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> dim(1, 16);
    const int m = dim(rng), k = dim(rng), n = dim(rng);
    Tensor a = random_tensor({m, k}, rng, false);
    Tensor b = random_tensor({k, n}, rng, false);
    Graph g;
    Tensor c = g.matmul(a, b);
    std::vector<double> expected = naive_matmul(a, b);
    for (std::int64_t i = 0; i < c.numel(); ++i) {
      CHECK(std::abs(c.at(static_cast<int>(i)) - expected[static_cast<std::size_t>(i)]) < 1e-12);
    }
  }
}

TEST_CASE("matmul names both shapes on mismatch") {
  Graph g;
  Tensor a = Tensor::zeros({5, 4});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(g.matmul(a, b),
                       "matmul: inner dimensions disagree, [5,4] x [3,2]", DimensionError);
}

TEST_CASE("softmax forced anchors") {
  Graph g;
  Tensor flat = g.softmax(Tensor::from_values({4}, {0, 0, 0, 0}));
  for (int i = 0; i < 4; ++i) CHECK(flat.at(i) == doctest::Approx(0.25).epsilon(1e-14));

  Tensor pair = g.softmax(Tensor::from_values({2}, {0.0, std::log(2.0)}));
  CHECK(pair.at(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(pair.at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax survives extreme logits, matches extended precision") {
  Graph g;
  Tensor out = g.softmax(Tensor::from_values({2}, {1000.0, 0.0}));
  // Extended-precision oracle: shift by the max and normalize.
  const long double e0 = expl(0.0L), e1 = expl(-1000.0L);
  const long double total = e0 + e1;
  CHECK(std::abs(out.at(0) - static_cast<double>(e0 / total)) < 1e-12);
  CHECK(std::abs(out.at(1) - static_cast<double>(e1 / total)) < 1e-12);
  CHECK(std::isfinite(out.at(0)));
  CHECK(std::isfinite(out.at(1)));
}

TEST_CASE("softmax rows sum to one under large magnitudes") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-1e4, 1e4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::zeros({4, 9});
    for (double& v : x.mutable_values()) v = dist(rng);
    Graph g;
    Tensor y = g.softmax(x);
    for (int r = 0; r < 4; ++r) {
      double total = 0.0;
      for (int c = 0; c < 9; ++c) {
        CHECK(y.at(r, c) >= 0.0);
        total += y.at(r, c);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cross_entropy anchors") {
  Graph g;
  Tensor uniform = Tensor::from_values({4}, {1.5, 1.5, 1.5, 1.5});
  for (TokenId t = 0; t < 4; ++t) {
    CHECK(g.cross_entropy(uniform, t).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }

  Tensor spike = Tensor::from_values({3}, {0.0, 1e6, 0.0});
  CHECK(g.cross_entropy(spike, 1).item() == doctest::Approx(0.0).epsilon(1e-12));

  // Hand oracle in extended precision for logits [1, -1, 0.5], target 2.
  Tensor logits = Tensor::from_values({3}, {1.0, -1.0, 0.5});
  const long double lse = logl(expl(1.0L) + expl(-1.0L) + expl(0.5L));
  const double expected = static_cast<double>(lse - 0.5L);
  CHECK(std::abs(g.cross_entropy(logits, 2).item() - expected) < 1e-12);

  CHECK(g.cross_entropy(logits, 0).item() >= 0.0);
  CHECK_THROWS_AS(g.cross_entropy(logits, 3), IndexError);
  CHECK_THROWS_AS(g.cross_entropy(logits, -1), IndexError);
}

TEST_CASE("backward on f(x) = x*x") {
  Graph g;
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = g.mul(x, x);
  g.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward of softmax-cross_entropy composite equals p - onehot") {
  Graph g;
  Tensor logits = Tensor::from_values({5}, {0.3, -1.2, 2.0, 0.0, 0.7}, true);
  Tensor loss = g.cross_entropy(logits, 2);
  g.backward(loss);
  Tensor p = g.softmax(logits.copy());
  for (int i = 0; i < 5; ++i) {
    const double expected = p.at(i) - (i == 2 ? 1.0 : 0.0);
    CHECK(logits.grad()[static_cast<std::size_t>(i)] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("backward requires a scalar produced by the graph") {
  Graph g;
  Tensor x = Tensor::zeros({2, 2}, true);
  Tensor y = g.add(x, x);
  CHECK_THROWS_AS(g.backward(y), ContractError);          // non-scalar
  CHECK_THROWS_AS(g.backward(Tensor::scalar(1.0, true)), ContractError);  // leaf
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Graph g;
  Tensor x = Tensor::scalar(5.0, true);
  Tensor y = g.add(x, x);  // d(x+x)/dx = 2
  g.backward(y);
  CHECK(x.grad()[0] == 2.0);

  // Re-running backward accumulates rather than overwrites.
  Graph g2;
  Tensor z = g2.add(x, x);
  g2.backward(z);
  CHECK(x.grad()[0] == 4.0);
}

TEST_CASE("every op passes central finite differences") {
  for (const OpCase& op : all_op_cases()) {
    CAPTURE(op.name);
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      GradCheckResult r = op.run(seed);
      CHECK(r.checked > 0);
      CHECK_MESSAGE(r.max_rel_err < 1e-4, op.name, " seed ", seed, " err ", r.max_rel_err);
    }
  }
}

TEST_CASE("adam first step and zero-grad behavior") {
  SUBCASE("zero grads leave params unchanged") {
    Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
    p.mutable_grad();  // no grad allocated yet; adam treats missing as zero
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, 0.1, st);
    CHECK(p.at(0) == 1.0);
    CHECK(p.at(1) == -2.0);
    CHECK(p.at(2) == 0.5);
  }

  SUBCASE("bias-corrected first step moves by about lr") {
    Tensor p = Tensor::scalar(5.0, true);
    {
      Graph g;
      Tensor loss = g.mul(p, Tensor::scalar(1.0));  // d loss / dp = 1
      g.backward(loss);
    }
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, 1e-3, st);
    // mhat = g, vhat = g^2 on step one, so the update is lr/(1 + eps).
    const double expected = 5.0 - 1e-3 / (1.0 + 1e-8);
    CHECK(p.item() == doctest::Approx(expected).epsilon(1e-15));
    CHECK(p.item() == doctest::Approx(5.0 - 1e-3).epsilon(1e-6));
  }

  SUBCASE("identical grad sequences give bit-identical params") {
    auto run = [] {
      Tensor p = Tensor::from_values({2}, {0.4, -0.7}, true);
      std::vector<Tensor> params{p};
      AdamState st;
      std::mt19937_64 rng(99);
      std::normal_distribution<double> dist;
      for (int step = 0; step < 25; ++step) {
        p.zero_grad();
        {
          Graph g;
          Tensor w = Tensor::from_values({2}, {dist(rng), dist(rng)});
          g.backward(g.sum(g.mul(p, w)));
        }
        adam_step(params, 1e-2, st);
      }
      return std::vector<double>(p.values().begin(), p.values().end());
    };
    CHECK(run() == run());
  }
}

TEST_CASE("sgd and clipping") {
  Tensor p = Tensor::from_values({2}, {1.0, 1.0}, true);
  {
    Graph g;
    Tensor w = Tensor::from_values({2}, {3.0, 4.0});
    g.backward(g.sum(g.mul(p, w)));  // grad = (3, 4), norm 5
  }
  std::vector<Tensor> params{p};
  const double norm = clip_global_grad_norm(params, 1.0);
  CHECK(norm == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(p.grad()[0] == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(p.grad()[1] == doctest::Approx(0.8).epsilon(1e-14));

  sgd_step(params, 0.5);
  CHECK(p.at(0) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(p.at(1) == doctest::Approx(0.6).epsilon(1e-14));

  zero_grads(params);
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
  CHECK(Tensor::scalar(2.0).numel() == 1);
  Graph g;
  CHECK_THROWS_AS(g.add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(g.gather_rows(Tensor::zeros({3, 2}), std::vector<TokenId>{3}), IndexError);
  CHECK_THROWS_AS(g.slice_cols(Tensor::zeros({2, 4}), 2, 2), IndexError);
}

TEST_CASE("no-grad mode computes identical values and records nothing") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({3, 3}, rng, true);
  Tensor b = random_tensor({3, 3}, rng, true);

  Graph g1;
  Tensor y1 = g1.matmul(a, b);
  CHECK(g1.node_count() == 1);

  Graph g2;
  NoGradGuard guard(g2);
  Tensor y2 = g2.matmul(a, b);
  CHECK(g2.node_count() == 0);
  CHECK_FALSE(y2.requires_grad());
  for (std::int64_t i = 0; i < y1.numel(); ++i) {
    CHECK(y1.at(static_cast<int>(i)) == y2.at(static_cast<int>(i)));
  }
}
