#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "seqvi/autodiff.hpp"
#include "seqvi/random.hpp"

namespace seqvi::testing {

using ad::Tensor;
using Fn = std::function<Tensor(std::span<const Tensor>)>;

// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1) over every
// input element, numeric gradients by central differences of `numeric`
// (f itself when empty).
inline double fd_max_rel_error(const Fn& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                               const Fn& numeric = {}) {
  const Fn& g_num = numeric ? numeric : f;
  ad::Graph g;
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t));
  const auto grads = g.backward(f(leaves));

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = grads.at(leaves[i]).data();
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      auto eval = [&](double delta) {
        std::vector<Tensor> in = inputs;
        std::vector<double> d(inputs[i].data().begin(), inputs[i].data().end());
        d[j] += delta;
        in[i] = Tensor::constant(inputs[i].shape(), std::move(d));
        return g_num(in).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      const double a = analytic[j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(n);
  for (double& v : d) v = rng.uniform(lo, hi);
  return d;
}

inline Tensor random_tensor(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape.numel());
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor::constant(shape, std::move(d));
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace seqvi::testing
