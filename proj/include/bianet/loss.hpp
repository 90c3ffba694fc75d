#pragma once

#include <array>
#include <cmath>

#include "bianet/network.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

inline constexpr double kBceClamp = 1e-7;

// Deep-supervision weights; all default to one.
template <typename T>
struct LossWeights {
  std::array<T, 6> level = {1, 1, 1, 1, 1, 1};
  T depth = 1;
  T rgb = 1;

  void validate() const {
    auto ok = [](T v) { return std::isfinite(static_cast<double>(v)) && v >= 0; };
    for (T v : level) {
      if (!ok(v)) throw ConfigError("loss weights must be finite and >= 0");
    }
    if (!ok(depth) || !ok(rgb)) {
      throw ConfigError("loss weights must be finite and >= 0");
    }
  }
};

// Mean binary cross entropy, probabilities clamped to [1e-7, 1-1e-7].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probs, const Tensor<T>& target) {
  if (probs.shape() != target.shape()) {
    throw ConfigError("bce_loss: shape mismatch " + shape_str(probs.shape()) +
                      " vs " + shape_str(target.shape()));
  }
  auto x = clamp(probs, static_cast<T>(kBceClamp), static_cast<T>(1 - kBceClamp));
  auto ones = Tensor<T>::full(x.shape(), T(1));
  auto pos = eltwise(target, log_elem(x), Eltwise::mul);
  auto neg = eltwise(eltwise(ones, target, Eltwise::sub),
                     log_elem(eltwise(ones, x, Eltwise::sub)), Eltwise::mul);
  return scalar_mul(reduce(eltwise(pos, neg, Eltwise::add), Reduce::mean),
                    T(-1));
}

// Weighted sum of the deep-supervision terms. Each logit map is bilinearly
// upsampled to the ground-truth resolution before the sigmoid.
template <typename T>
Tensor<T> total_loss(const SaliencyOutputs<T>& out, const Tensor<T>& gt,
                     const LossWeights<T>& w = {}) {
  w.validate();
  if (gt.rank() != 4 || gt.dim(1) != 1) {
    throw ConfigError("total_loss: ground truth must be [N,1,H,W]");
  }
  const int h = gt.dim(2), wd = gt.dim(3);
  auto term = [&](const Tensor<T>& logits, T weight) {
    auto up = upsample_bilinear(logits, h, wd);
    return scalar_mul(bce_loss(sigmoid(up), gt), weight);
  };
  Tensor<T> acc = term(out.logits[0], w.level[0]);
  for (int i = 1; i < 6; ++i) {
    acc = eltwise(acc, term(out.logits[i], w.level[i]), Eltwise::add);
  }
  if (out.depth_logits) {
    acc = eltwise(acc, term(*out.depth_logits, w.depth), Eltwise::add);
  }
  acc = eltwise(acc, term(out.rgb_logits, w.rgb), Eltwise::add);
  return acc;
}

}  // namespace bianet
