#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "bianet/rng.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

struct GradCheckOptions {
  double eps = 1e-4;
  // 0 checks every element; otherwise a seeded random subset per tensor.
  int max_elems_per_input = 0;
  std::uint64_t sample_seed = 0;
};

// Central-difference check of d(fn)/d(inputs). `fn` must be pure and return a
// scalar; it reads the input tensors by reference, so their values are
// perturbed in place. Returns max over checked elements of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<Tensor<double>()>& fn,
                         std::vector<Tensor<double>> inputs,
                         const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor<double> loss = fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) analytic.push_back(in.grad());

  auto eval = [&]() {
    NoGradGuard off;
    return fn().values()[0];
  };

  Rng pick(opt.sample_seed + 1);
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& v = inputs[t].values();
    std::vector<std::size_t> idx;
    if (opt.max_elems_per_input > 0 &&
        v.size() > static_cast<std::size_t>(opt.max_elems_per_input)) {
      for (int k = 0; k < opt.max_elems_per_input; ++k) {
        idx.push_back(static_cast<std::size_t>(pick.uniform() * v.size()));
      }
    } else {
      idx.resize(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    }
    for (std::size_t i : idx) {
      const double keep = v[i];
      v[i] = keep + opt.eps;
      const double up = eval();
      v[i] = keep - opt.eps;
      const double dn = eval();
      v[i] = keep;
      const double numeric = (up - dn) / (2.0 * opt.eps);
      const double a = analytic[t][i];
      const double rel =
          std::abs(a - numeric) /
          std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Single-input convenience form.
inline double grad_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& fn,
    Tensor<double> input, double eps = 1e-4) {
  GradCheckOptions opt;
  opt.eps = eps;
  return grad_check([&]() { return fn(input); }, {input}, opt);
}

}  // namespace bianet
