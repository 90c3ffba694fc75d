#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bianet/attention.hpp"
#include "bianet/gradcheck.hpp"
#include "bianet/loss.hpp"
#include "bianet/rng.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

// Finite-difference sweep over every differentiable building block, at 64-bit
// with small shapes. Module blocks sample a seeded subset of their parameter
// elements to keep the sweep fast; elementary ops are checked exhaustively.
struct GradCheckSummary {
  std::vector<std::pair<std::string, double>> cases;  // name -> worst rel err
  double worst = 0.0;

  bool passed(double tolerance) const { return worst <= tolerance; }
};

namespace detail {

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Alternating bias offsets and gentler weights keep every ReLU
// pre-activation away from zero, where a +-eps probe would cross the kink.
inline void offset_biases(ParamStore<double>& store) {
  int flip = 0;
  for (auto& [name, t] : store.items()) {
    if (name.size() > 5 && name.rfind(".bias") == name.size() - 5) {
      for (auto& v : t.values()) v = (flip++ % 2 == 0) ? 0.75 : -0.75;
    } else {
      for (auto& v : t.values()) v *= 0.5;
    }
  }
}

}  // namespace detail

inline GradCheckSummary run_gradcheck_suite(int seeds, std::uint64_t base_seed,
                                            double eps = 1e-4) {
  GradCheckSummary summary;
  auto record = [&](const std::string& name, double err) {
    for (auto& [n, e] : summary.cases) {
      if (n == name) {
        e = std::max(e, err);
        summary.worst = std::max(summary.worst, err);
        return;
      }
    }
    summary.cases.emplace_back(name, err);
    summary.worst = std::max(summary.worst, err);
  };

  for (int s = 0; s < seeds; ++s) {
    Rng rng(base_seed + 977 * s + 13);
    GradCheckOptions opt;
    opt.eps = eps;
    opt.sample_seed = base_seed + s;

    for (int dil : {1, 3, 5, 7}) {
      auto x = detail::random_uniform<double>({1, 2, 6, 6}, rng);
      auto w = detail::random_uniform<double>({2, 2, 3, 3}, rng);
      auto b = detail::random_uniform<double>({2}, rng);
      auto cot = detail::random_uniform<double>({1, 2, 6, 6}, rng);
      ConvSpec spec = conv3x3(2, 2, dil);
      auto fn = [&]() {
        return reduce(eltwise(conv2d(x, spec, w, b), cot, Eltwise::mul),
                      Reduce::mean);
      };
      record("conv2d dilation " + std::to_string(dil),
             grad_check(fn, {x, w, b}, opt));
    }
    {
      ConvSpec spec = conv3x3(2, 3, 1);
      spec.sh = spec.sw = 2;
      auto x = detail::random_uniform<double>({1, 2, 6, 6}, rng);
      auto w = detail::random_uniform<double>({3, 2, 3, 3}, rng);
      auto b = detail::random_uniform<double>({3}, rng);
      auto cot = detail::random_uniform<double>({1, 3, 3, 3}, rng);
      auto fn = [&]() {
        return reduce(eltwise(conv2d(x, spec, w, b), cot, Eltwise::mul),
                      Reduce::mean);
      };
      record("conv2d stride 2", grad_check(fn, {x, w, b}, opt));
    }
    {
      // well separated pool inputs so probes cannot flip the argmax
      std::vector<double> v(16);
      for (int i = 0; i < 16; ++i) v[i] = 0.1 * i;
      Rng sh(base_seed + s + 1);
      sh.shuffle(v.begin(), v.end());
      auto x = Tensor<double>::from({1, 1, 4, 4}, v);
      auto cot = detail::random_uniform<double>({1, 1, 2, 2}, rng);
      auto fn = [&]() {
        return reduce(eltwise(max_pool2d(x), cot, Eltwise::mul), Reduce::sum);
      };
      record("max_pool2d", grad_check(fn, {x}, opt));
    }
    {
      auto x = detail::random_uniform<double>({1, 2, 3, 4}, rng);
      auto cot = detail::random_uniform<double>({1, 2, 7, 5}, rng);
      auto fn = [&]() {
        return reduce(eltwise(upsample_bilinear(x, 7, 5), cot, Eltwise::mul),
                      Reduce::mean);
      };
      record("upsample_bilinear", grad_check(fn, {x}, opt));
    }
    {
      auto x = detail::random_uniform<double>({3, 5}, rng);
      for (auto& v : x.values()) v += v >= 0 ? 0.05 : -0.05;
      auto cot = detail::random_uniform<double>({3, 5}, rng);
      auto fn = [&]() {
        return reduce(eltwise(relu(x), cot, Eltwise::mul), Reduce::sum);
      };
      record("relu", grad_check(fn, {x}, opt));
      auto y = detail::random_uniform<double>({3, 5}, rng, -3.0, 3.0);
      auto fn2 = [&]() {
        return reduce(eltwise(sigmoid(y), cot, Eltwise::mul), Reduce::sum);
      };
      record("sigmoid", grad_check(fn2, {y}, opt));
    }
    {
      auto a = detail::random_uniform<double>({1, 2, 3, 3}, rng);
      auto b = detail::random_uniform<double>({1, 3, 3, 3}, rng);
      auto cot = detail::random_uniform<double>({1, 5, 3, 3}, rng);
      auto fn = [&]() {
        return reduce(
            eltwise(concat_channels<double>({a, b}), cot, Eltwise::mul),
            Reduce::sum);
      };
      record("concat_channels", grad_check(fn, {a, b}, opt));
    }
    {
      auto x = detail::random_uniform<double>({4, 4}, rng, 0.05, 0.95);
      std::vector<double> tv(16);
      for (auto& t : tv) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
      auto target = Tensor<double>::from({4, 4}, tv);
      auto fn = [&]() { return bce_loss(x, target); };
      record("bce_loss", grad_check(fn, {x}, opt));
    }
    {
      ParamStore<double> store;
      auto p = make_bam(store, "bam", 8, AttentionMode::bilateral, rng);
      detail::offset_biases(store);
      auto f = detail::random_uniform<double>({1, 8, 4, 4}, rng);
      auto sn = detail::random_uniform<double>({1, 1, 2, 2}, rng);
      auto cot = detail::random_uniform<double>({1, 1, 4, 4}, rng);
      std::vector<Tensor<double>> inputs = {f, sn};
      for (auto& [name, t] : store.items()) inputs.push_back(t);
      GradCheckOptions sampled = opt;
      sampled.max_elems_per_input = 60;
      auto fn = [&]() {
        return reduce(eltwise(bam_forward(f, sn, p), cot, Eltwise::mul),
                      Reduce::mean);
      };
      record("bam block", grad_check(fn, inputs, sampled));
    }
    {
      ParamStore<double> store;
      auto p = make_mbam(store, "mbam", 8, AttentionMode::bilateral, rng);
      detail::offset_biases(store);
      auto f = detail::random_uniform<double>({1, 8, 4, 4}, rng);
      auto sn = detail::random_uniform<double>({1, 1, 2, 2}, rng);
      auto cot = detail::random_uniform<double>({1, 1, 4, 4}, rng);
      std::vector<Tensor<double>> inputs = {f, sn};
      for (auto& [name, t] : store.items()) inputs.push_back(t);
      GradCheckOptions sampled = opt;
      sampled.max_elems_per_input = 60;
      auto fn = [&]() {
        return reduce(eltwise(mbam_forward(f, sn, p), cot, Eltwise::mul),
                      Reduce::mean);
      };
      record("mbam block", grad_check(fn, inputs, sampled));
    }
  }
  return summary;
}

}  // namespace bianet
