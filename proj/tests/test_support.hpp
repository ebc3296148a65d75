#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "alood/gradcheck.hpp"
#include "alood/ops.hpp"
#include "alood/tensor.hpp"

namespace alood::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

/// Random tensor whose entries are pairwise separated by at least `gap`
/// in absolute value, keeping ReLU and max away from their kinks.
inline Tensor random_distinct(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  Tensor t(std::move(shape));
  std::vector<double> values(t.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = (static_cast<double>(i) + 0.5) * gap + gap;
  }
  std::shuffle(values.begin(), values.end(), rng);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = sign(rng) ? values[i] : -values[i];
  return t;
}

/// Builds a scalar from leaf variables bound to the given inputs.
using ScalarGraph = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative error between tape gradients and central differences
/// over every input of the graph.
inline double gradient_error(const ScalarGraph& graph, const std::vector<Tensor>& inputs,
                             double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  tape.backward(graph(tape, leaves));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& probe) {
      Tape t2;
      std::vector<Var> vars;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        vars.push_back(t2.constant(j == k ? probe : inputs[j]));
      }
      return t2.value(graph(t2, vars)).item();
    };
    const Tensor numeric = finite_difference_gradient(f, inputs[k], h);
    worst = std::max(worst, relative_error(tape.grad(leaves[k]), numeric));
  }
  return worst;
}

/// sum(x * weights): a scalar readout with non-uniform upstream gradient.
inline Var weighted_sum(Tape& tape, Var x, const Tensor& weights) {
  return sum(tape, mul(tape, x, tape.constant(weights)));
}

}  // namespace alood::testing
