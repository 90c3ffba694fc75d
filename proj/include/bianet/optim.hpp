#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bianet/layers.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

template <typename T>
struct AdamConfig {
  T lr = static_cast<T>(1e-4);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.99);
  T eps = static_cast<T>(1e-8);
};

// Adam with bias correction. First and second moments are held per parameter
// in store order; a missing gradient counts as zero.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

  const AdamConfig<T>& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  void step(ParamStore<T>& params) {
    if (m_.empty()) {
      for (const auto& [name, p] : params.items()) {
        m_.emplace_back(p.numel(), T(0));
        v_.emplace_back(p.numel(), T(0));
      }
    }
    ++t_;
    const T c1 = static_cast<T>(1.0 - std::pow(static_cast<double>(cfg_.beta1),
                                               static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(static_cast<double>(cfg_.beta2),
                                               static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      auto& p = params.items()[i].second;
      auto& val = p.values();
      const auto& g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        const T gj = g.empty() ? T(0) : g[j];
        m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * gj * gj;
        const T mhat = m[j] / c1;
        const T vhat = v[j] / c2;
        val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig<T> cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace bianet
