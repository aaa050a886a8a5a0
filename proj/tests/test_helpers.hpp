#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "marknmt/tensor.hpp"

namespace marknmt::testing {

// Independent finite-difference oracle. Builds the graph twice per perturbed
// element and compares central differences against reverse-mode gradients.
//
// The probed function receives a training tape and one leaf tensor per input
// spec and must return a single output tensor; the check contracts it to a
// scalar through a fixed random linear functional.
struct GradCheck {
  double step = 1e-4;
  double tolerance = 1e-4;
  std::uint64_t dropout_seed = 42;

  struct InputSpec {
    Shape shape;
    std::vector<double> data;
  };

  using Builder = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

  // Returns the worst relative error seen.
  double run(const std::vector<InputSpec>& inputs, const Builder& build,
             std::mt19937_64& gen) const {
    auto eval = [&](const std::vector<std::vector<double>>& values,
                    const std::vector<double>& contraction,
                    std::vector<std::vector<double>>* grads) {
      Tape tape(TapeOptions{true, dropout_seed, true});
      std::vector<Tensor> leaves;
      for (std::size_t i = 0; i < inputs.size(); ++i)
        leaves.push_back(tape.input(inputs[i].shape, values[i]));
      Tensor out = build(tape, leaves);
      Tensor c = tape.input(out.shape(), contraction);
      Tensor loss = ops::sum(ops::mul(out, c));
      const double value = loss.scalar();
      if (grads) {
        tape.backward(loss);
        grads->clear();
        for (const auto& leaf : leaves) grads->push_back(leaf.grad());
      }
      return value;
    };

    std::vector<std::vector<double>> values;
    for (const auto& in : inputs) values.push_back(in.data);

    // Probe output shape, then fix the contraction coefficients.
    std::vector<double> contraction;
    {
      Tape tape(TapeOptions{true, dropout_seed, true});
      std::vector<Tensor> leaves;
      for (std::size_t i = 0; i < inputs.size(); ++i)
        leaves.push_back(tape.input(inputs[i].shape, values[i]));
      Tensor out = build(tape, leaves);
      std::uniform_real_distribution<double> dist(0.2, 1.0);
      contraction.resize(out.value().size());
      for (double& x : contraction) x = dist(gen);
    }

    std::vector<std::vector<double>> ad_grads;
    eval(values, contraction, &ad_grads);

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      for (std::size_t k = 0; k < values[i].size(); ++k) {
        auto plus = values, minus = values;
        plus[i][k] += step;
        minus[i][k] -= step;
        const double fd =
            (eval(plus, contraction, nullptr) - eval(minus, contraction, nullptr)) /
            (2.0 * step);
        const double rel = std::abs(ad_grads[i][k] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
      }
    }
    return worst;
  }
};

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& gen,
                                         double lo = -2.0, double hi = 2.0,
                                         double keep_away_from_zero = 0.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) {
    do {
      x = dist(gen);
    } while (keep_away_from_zero > 0.0 && std::abs(x) < keep_away_from_zero);
  }
  return v;
}

}  // namespace marknmt::testing
