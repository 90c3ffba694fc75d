#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bianet/layers.hpp"
#include "bianet/rng.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

// Which attention branches a refinement module carries. `plain` is the
// no-attention ablation: a single conv branch without any weighting.
enum class AttentionMode { bilateral, foreground_only, background_only, plain };

inline bool has_foreground(AttentionMode m) {
  return m == AttentionMode::bilateral || m == AttentionMode::foreground_only;
}
inline bool has_background(AttentionMode m) {
  return m == AttentionMode::bilateral || m == AttentionMode::background_only;
}

// Complementary foreground/background weighting maps, each in (0,1) and
// summing to one elementwise.
template <typename T>
struct AttentionPair {
  Tensor<T> foreground;  // sigmoid of the upsampled coarser logits
  Tensor<T> background;  // its complement
};

// foreground = sigmoid(U(next_logits)), background = 1 - foreground.
template <typename T>
AttentionPair<T> attention_maps(const Tensor<T>& next_logits, int out_h,
                                int out_w) {
  if (next_logits.rank() != 4 || next_logits.dim(1) != 1) {
    throw ConfigError("attention_maps: logits must be a single-channel map");
  }
  AttentionPair<T> pair;
  pair.foreground = sigmoid(upsample_bilinear(next_logits, out_h, out_w));
  auto ones = Tensor<T>::full(pair.foreground.shape(), T(1));
  pair.background = eltwise(ones, pair.foreground, Eltwise::sub);
  return pair;
}

// Bilateral attention refinement: reduce channels with a 1x1 conv, weight the
// reduced feature by each attention map, run the per-branch 3x3 conv, then
// predict a single-channel residual from the joined branches.
template <typename T>
struct BamParams {
  AttentionMode mode = AttentionMode::bilateral;
  int width = 32;
  Conv2d<T> reduce;                 // 1x1, feature channels -> width
  std::optional<Conv2d<T>> p_f;     // 3x3 width->width + ReLU
  std::optional<Conv2d<T>> p_b;     // independent parameters from p_f
  std::optional<Conv2d<T>> p_plain; // no-attention branch
  Conv2d<T> pr_hidden;              // 3x3 joined->width + ReLU
  Conv2d<T> pr_out;                 // 3x3 width->1

  int joined_channels() const {
    return mode == AttentionMode::bilateral ? 2 * width : width;
  }
};

template <typename T>
BamParams<T> make_bam(ParamStore<T>& store, const std::string& name,
                      int in_channels, AttentionMode mode, Rng& rng,
                      int width = 32) {
  BamParams<T> p;
  p.mode = mode;
  p.width = width;
  p.reduce = make_conv(store, name + ".reduce", conv1x1(in_channels, width), rng);
  if (has_foreground(mode)) {
    p.p_f = make_conv(store, name + ".pf", conv3x3(width, width), rng);
  }
  if (has_background(mode)) {
    p.p_b = make_conv(store, name + ".pb", conv3x3(width, width), rng);
  }
  if (mode == AttentionMode::plain) {
    p.p_plain = make_conv(store, name + ".p", conv3x3(width, width), rng);
  }
  p.pr_hidden = make_conv(store, name + ".pr0",
                          conv3x3(p.joined_channels(), width), rng);
  p.pr_out = make_conv(store, name + ".pr1", conv3x3(width, 1), rng);
  return p;
}

namespace detail {
template <typename T>
void check_refine_inputs(const Tensor<T>& feature, const Tensor<T>& next_logits,
                         int reduce_in, const char* what) {
  if (feature.rank() != 4 || feature.dim(1) != reduce_in) {
    throw ConfigError(std::string(what) + ": feature channels " +
                      std::to_string(feature.dim(1)) +
                      " do not match module input " + std::to_string(reduce_in));
  }
  if (next_logits.dim(2) * 2 != feature.dim(2) ||
      next_logits.dim(3) * 2 != feature.dim(3)) {
    throw ConfigError(std::string(what) +
                      ": feature must be one octave above the coarser logits");
  }
}
}  // namespace detail

// Residual prediction R for one refinement level. `override_attention`
// substitutes the maps derived from next_logits (ablation probes and tests).
template <typename T>
Tensor<T> bam_forward(const Tensor<T>& feature, const Tensor<T>& next_logits,
                      const BamParams<T>& p,
                      const AttentionPair<T>* override_attention = nullptr) {
  detail::check_refine_inputs(feature, next_logits, p.reduce.spec.in_channels,
                              "bam_forward");
  const int h = feature.dim(2), w = feature.dim(3);
  Tensor<T> reduced = p.reduce(feature);
  std::vector<Tensor<T>> branches;
  if (p.mode == AttentionMode::plain) {
    branches.push_back(relu((*p.p_plain)(reduced)));
  } else {
    AttentionPair<T> att = override_attention
                               ? *override_attention
                               : attention_maps(next_logits, h, w);
    if (has_foreground(p.mode)) {
      branches.push_back(
          relu((*p.p_f)(eltwise(reduced, att.foreground, Eltwise::mul))));
    }
    if (has_background(p.mode)) {
      branches.push_back(
          relu((*p.p_b)(eltwise(reduced, att.background, Eltwise::mul))));
    }
  }
  Tensor<T> joined =
      branches.size() == 1 ? branches[0] : concat_channels(branches);
  return p.pr_out(relu(p.pr_hidden(joined)));
}

// Multi-scale extension: per branch, a pyramid of a 1x1 conv and three
// dilated 3x3 convs (rates 3, 5, 7) applied to the attention-weighted
// full-channel feature. No channel reduction in front of the pyramid.
template <typename T>
struct DilatedPyramid {
  Conv2d<T> d1;          // 1x1 -> width
  Conv2d<T> d2, d3, d4;  // 3x3 -> width, dilation 3 / 5 / 7
};

inline constexpr int kPyramidRates[3] = {3, 5, 7};

template <typename T>
struct MbamParams {
  AttentionMode mode = AttentionMode::bilateral;
  int width = 32;
  int in_channels = 0;
  std::optional<DilatedPyramid<T>> pyr_f, pyr_b, pyr_plain;
  Conv2d<T> pr_hidden;  // 3x3 joined->width + ReLU
  Conv2d<T> pr_out;     // 3x3 width->1

  int joined_channels() const {
    return (mode == AttentionMode::bilateral ? 8 : 4) * width;
  }
};

template <typename T>
DilatedPyramid<T> make_pyramid(ParamStore<T>& store, const std::string& name,
                               int in_channels, int width, Rng& rng) {
  DilatedPyramid<T> p;
  p.d1 = make_conv(store, name + ".d1", conv1x1(in_channels, width), rng);
  p.d2 = make_conv(store, name + ".d2",
                   conv3x3(in_channels, width, kPyramidRates[0]), rng);
  p.d3 = make_conv(store, name + ".d3",
                   conv3x3(in_channels, width, kPyramidRates[1]), rng);
  p.d4 = make_conv(store, name + ".d4",
                   conv3x3(in_channels, width, kPyramidRates[2]), rng);
  return p;
}

template <typename T>
MbamParams<T> make_mbam(ParamStore<T>& store, const std::string& name,
                        int in_channels, AttentionMode mode, Rng& rng,
                        int width = 32) {
  MbamParams<T> p;
  p.mode = mode;
  p.width = width;
  p.in_channels = in_channels;
  if (has_foreground(mode)) {
    p.pyr_f = make_pyramid(store, name + ".ff", in_channels, width, rng);
  }
  if (has_background(mode)) {
    p.pyr_b = make_pyramid(store, name + ".bf", in_channels, width, rng);
  }
  if (mode == AttentionMode::plain) {
    p.pyr_plain = make_pyramid(store, name + ".p", in_channels, width, rng);
  }
  p.pr_hidden = make_conv(store, name + ".pr0",
                          conv3x3(p.joined_channels(), width), rng);
  p.pr_out = make_conv(store, name + ".pr1", conv3x3(width, 1), rng);
  return p;
}

template <typename T>
Tensor<T> pyramid_forward(const DilatedPyramid<T>& pyr, const Tensor<T>& x) {
  return concat_channels<T>({relu(pyr.d1(x)), relu(pyr.d2(x)),
                             relu(pyr.d3(x)), relu(pyr.d4(x))});
}

// Small spatial sizes are fine: the dilated taps that fall outside the
// feature read zero padding.
template <typename T>
Tensor<T> mbam_forward(const Tensor<T>& feature, const Tensor<T>& next_logits,
                       const MbamParams<T>& p,
                       const AttentionPair<T>* override_attention = nullptr) {
  detail::check_refine_inputs(feature, next_logits, p.in_channels,
                              "mbam_forward");
  const int h = feature.dim(2), w = feature.dim(3);
  std::vector<Tensor<T>> branches;
  if (p.mode == AttentionMode::plain) {
    branches.push_back(pyramid_forward(*p.pyr_plain, feature));
  } else {
    AttentionPair<T> att = override_attention
                               ? *override_attention
                               : attention_maps(next_logits, h, w);
    if (has_foreground(p.mode)) {
      branches.push_back(pyramid_forward(
          *p.pyr_f, eltwise(feature, att.foreground, Eltwise::mul)));
    }
    if (has_background(p.mode)) {
      branches.push_back(pyramid_forward(
          *p.pyr_b, eltwise(feature, att.background, Eltwise::mul)));
    }
  }
  Tensor<T> joined =
      branches.size() == 1 ? branches[0] : concat_channels(branches);
  return p.pr_out(relu(p.pr_hidden(joined)));
}

}  // namespace bianet
