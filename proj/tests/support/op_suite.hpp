#pragma once

// One seeded finite-difference case per autodiff op, shared by the unit
// tests and the acceptance suite. Non-scalar outputs are projected onto a
// random constant tensor so the whole Jacobian is exercised.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "support/finite_diff.hpp"
#include "ulab/tensor.hpp"

namespace ulab::testing {

struct OpCase {
  std::string name;
  // Runs one random case for the op and returns the worst relative error.
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

namespace detail {

inline Tensor project(Graph& g, const Tensor& out, std::mt19937_64& rng) {
  Tensor weights = random_tensor(out.shape(), rng, /*requires_grad=*/false);
  return g.sum(g.mul(out, weights));
}

}  // namespace detail

inline std::vector<OpCase> all_op_cases() {
  using detail::project;
  std::vector<OpCase> cases;

  cases.push_back({"add", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 4}, rng);
                     auto b = random_tensor({3, 4}, rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.add(in[0], in[1]), r);
                         },
                         {a, b});
                   }});

  cases.push_back({"mul", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 4}, rng);
                     auto b = random_tensor({3, 4}, rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.mul(in[0], in[1]), r);
                         },
                         {a, b});
                   }});

  cases.push_back({"scale", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({2, 5}, rng);
                     std::uniform_real_distribution<double> f(-2.0, 2.0);
                     const double factor = f(rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp, factor](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.scale(in[0], factor), r);
                         },
                         {a});
                   }});

  cases.push_back({"gelu", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({4, 3}, rng, true, 2.0);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.gelu(in[0]), r);
                         },
                         {a});
                   }});

  cases.push_back({"sum", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 3}, rng);
                     return check_gradients(
                         [](Graph& g, std::vector<Tensor>& in) { return g.sum(in[0]); }, {a});
                   }});

  cases.push_back({"matmul", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 4}, rng);
                     auto b = random_tensor({4, 2}, rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.matmul(in[0], in[1]), r);
                         },
                         {a, b});
                   }});

  cases.push_back({"transpose", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 5}, rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.transpose(in[0]), r);
                         },
                         {a});
                   }});

  cases.push_back({"gather_rows", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto table = random_tensor({6, 4}, rng);
                     std::uniform_int_distribution<TokenId> pick(0, 5);
                     auto rows = std::make_shared<std::vector<TokenId>>();
                     for (int i = 0; i < 5; ++i) rows->push_back(pick(rng));  // repeats likely
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp, rows](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.gather_rows(in[0], *rows), r);
                         },
                         {table});
                   }});

  cases.push_back({"slice_cols", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 6}, rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.slice_cols(in[0], 1, 4), r);
                         },
                         {a});
                   }});

  cases.push_back({"concat_cols", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 2}, rng);
                     auto b = random_tensor({3, 4}, rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           std::vector<Tensor> parts{in[0], in[1]};
                           return project(g, g.concat_cols(parts), r);
                         },
                         {a, b});
                   }});

  cases.push_back({"softmax", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 5}, rng, true, 2.0);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.softmax(in[0]), r);
                         },
                         {a});
                   }});

  cases.push_back({"log_softmax", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 5}, rng, true, 2.0);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.log_softmax(in[0]), r);
                         },
                         {a});
                   }});

  cases.push_back({"cross_entropy", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto logits = random_tensor({7}, rng, true, 2.0);
                     std::uniform_int_distribution<TokenId> pick(0, 6);
                     const TokenId target = pick(rng);
                     return check_gradients(
                         [target](Graph& g, std::vector<Tensor>& in) {
                           return g.cross_entropy(in[0], target);
                         },
                         {logits});
                   }});

  cases.push_back({"nll_rows", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto logits = random_tensor({5, 6}, rng, true, 2.0);
                     std::uniform_int_distribution<TokenId> pick(0, 5);
                     auto rows = std::make_shared<std::vector<int>>(std::vector<int>{0, 2, 4});
                     auto targets = std::make_shared<std::vector<TokenId>>();
                     for (std::size_t i = 0; i < rows->size(); ++i) targets->push_back(pick(rng));
                     return check_gradients(
                         [rows, targets](Graph& g, std::vector<Tensor>& in) {
                           return g.nll_rows(in[0], *targets, *rows);
                         },
                         {logits});
                   }});

  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = random_tensor({3, 6}, rng, true, 2.0);
                     auto gain = random_tensor({6}, rng);
                     auto bias = random_tensor({6}, rng);
                     auto rp = std::make_shared<std::mt19937_64>(seed ^ 0x9e37);
                     return check_gradients(
                         [rp](Graph& g, std::vector<Tensor>& in) {
                           std::mt19937_64 r(*rp);
                           return project(g, g.layer_norm(in[0], in[1], in[2]), r);
                         },
                         {a, gain, bias});
                   }});

  return cases;
}

}  // namespace ulab::testing
