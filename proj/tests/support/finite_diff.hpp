#pragma once

// Central finite-difference gradient checker. Independent of the tape's
// backward path: it only re-runs forward passes on perturbed copies.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "ulab/tensor.hpp"

namespace ulab::testing {

// Builds a scalar loss from the given inputs on the given graph. The
// harness perturbs input values between calls, so the builder must read
// inputs fresh every time.
using LossBuilder = std::function<Tensor(Graph&, std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

// rel err = |analytic - fd| / max(1, |analytic|, |fd|).
inline GradCheckResult check_gradients(const LossBuilder& build, std::vector<Tensor> inputs,
                                       double h = 1e-5) {
  Graph g;
  Tensor loss = build(g, inputs);
  g.backward(loss);

  GradCheckResult result;
  for (Tensor& input : inputs) {
    if (!input.requires_grad()) continue;
    if (!input.has_grad()) throw std::logic_error("grad check: input never received a gradient");
    for (std::int64_t i = 0; i < input.numel(); ++i) {
      auto vals = input.mutable_values();
      const double original = vals[static_cast<std::size_t>(i)];

      vals[static_cast<std::size_t>(i)] = original + h;
      Graph gp;
      NoGradGuard ng1(gp);
      const double up = build(gp, inputs).item();

      vals[static_cast<std::size_t>(i)] = original - h;
      Graph gm;
      NoGradGuard ng2(gm);
      const double down = build(gm, inputs).item();

      vals[static_cast<std::size_t>(i)] = original;

      const double fd = (up - down) / (2.0 * h);
      const double analytic = input.grad()[static_cast<std::size_t>(i)];
      const double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
      result.max_rel_err = std::max(result.max_rel_err, std::abs(analytic - fd) / denom);
      ++result.checked;
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                            double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

}  // namespace ulab::testing
