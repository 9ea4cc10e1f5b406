#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dwm/autodiff.hpp"
#include "dwm/rng.hpp"

namespace dwm::check {

// |a - n| / max(|a|, |n|, floor); the floor keeps gradients that are zero up
// to round-off from producing meaningless ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using ScalarFn = std::function<ad::Var(std::span<const ad::Var>)>;

// Largest relative error between reverse-mode gradients and central
// differences of `fn` over every element of every input.
inline double max_gradient_error(std::vector<ad::Tensor> inputs, const ScalarFn& fn, double h = 1e-5) {
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(ad::parameter(t));
  const ad::Var loss = fn(leaves);
  ad::backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto g = leaves[k].grad();
    const std::vector<double> analytic = g.empty() ? std::vector<double>(inputs[k].size(), 0.0)
                                                   : std::vector<double>(g.begin(), g.end());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<ad::Var> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          ad::Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          probe.push_back(ad::constant(t));
        }
        return fn(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
  }
  return worst;
}

inline ad::Tensor random_tensor(CounterRng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Random point on the probability simplex.
inline ad::Tensor random_simplex(CounterRng& rng, std::size_t n) {
  ad::Tensor t(ad::Shape{n});
  double total = 0.0;
  for (double& v : t.data()) {
    v = -std::log(1.0 - rng.uniform());
    total += v;
  }
  for (double& v : t.data()) v /= total;
  return t;
}

inline double sum_of(const ad::Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace dwm::check
