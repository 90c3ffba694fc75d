#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "bianet/attention.hpp"
#include "bianet/backbone.hpp"
#include "bianet/layers.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

// Full-network configuration: backbone widths, how many of the highest
// refinement levels use the multi-scale module, and the ablation switches.
struct NetConfig {
  BackboneConfig backbone;
  int mbam_count = 3;        // 0..5, converted from the highest level down
  bool depth_stream = true;  // false: RGB only, fused feature = RGB feature
  bool ff = true;            // foreground-first branch
  bool bf = true;            // background-first branch
  int input_h = 224, input_w = 224;

  // ff/bf both off selects the plain-conv (no attention) refinement.
  AttentionMode attention_mode() const {
    if (ff && bf) return AttentionMode::bilateral;
    if (ff) return AttentionMode::foreground_only;
    if (bf) return AttentionMode::background_only;
    return AttentionMode::plain;
  }

  void validate() const {
    backbone.validate();
    if (mbam_count < 0 || mbam_count > 5) {
      throw ConfigError("net config: mbam_count must be in [0,5]");
    }
    if (input_h < 32 || input_w < 32 || input_h % 32 != 0 ||
        input_w % 32 != 0) {
      throw ConfigError("net config: input size must be divisible by 32");
    }
  }

  static NetConfig toy() {
    NetConfig c;
    c.backbone = BackboneConfig::toy();
    c.input_h = c.input_w = 64;
    return c;
  }

  // Channels of the fused feature at level 1..6.
  int fused_channels(int level) const {
    const int w = level <= 5 ? backbone.block_widths[level - 1]
                             : backbone.extra_group_width;
    return depth_stream ? 2 * w : w;
  }

  bool level_is_multi_scale(int level) const {
    return level > 5 - mbam_count;  // levels 5, 4, ... get converted first
  }

  bool operator==(const NetConfig&) const = default;
};

// One top-down refinement stage, either single- or multi-scale.
template <typename T>
struct RefineModule {
  bool multi_scale = false;
  std::optional<BamParams<T>> bam;
  std::optional<MbamParams<T>> mbam;

  Tensor<T> forward(const Tensor<T>& feature, const Tensor<T>& next_logits) const {
    return multi_scale ? mbam_forward(feature, next_logits, *mbam)
                       : bam_forward(feature, next_logits, *bam);
  }

  Conv2d<T>& residual_head() {
    return multi_scale ? mbam->pr_out : bam->pr_out;
  }
};

// Coarse prediction from the top fused feature: 3x3 -> 32 + ReLU, 3x3 -> 1.
template <typename T>
Tensor<T> predict_initial(const Tensor<T>& fused_top, const Conv2d<T>& hidden,
                          const Conv2d<T>& out) {
  return out(relu(hidden(fused_top)));
}

// S_i = R_i + U(S_{i+1}).
template <typename T>
Tensor<T> refine_step(const Tensor<T>& next_logits, const Tensor<T>& feature,
                      const RefineModule<T>& m) {
  Tensor<T> residual = m.forward(feature, next_logits);
  Tensor<T> up = upsample_bilinear(next_logits, feature.dim(2), feature.dim(3));
  return eltwise(residual, up, Eltwise::add);
}

// All supervised maps of one forward pass. logits[0] is the finest (S_1),
// logits[5] the coarsest (S_6).
template <typename T>
struct SaliencyOutputs {
  std::array<Tensor<T>, 6> logits;
  Tensor<T> rgb_logits;
  std::optional<Tensor<T>> depth_logits;
  Tensor<T> final;  // sigmoid(S_1), in (0,1), at input resolution

  int supervised_count() const { return depth_logits ? 8 : 7; }
};

template <typename T>
class BiANet {
 public:
  BiANet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    rgb_ = build_stream(store_, cfg_.backbone, "rgb", rng);
    if (cfg_.depth_stream) {
      depth_ = build_stream(store_, cfg_.backbone, "depth", rng);
    }
    const int top = cfg_.fused_channels(6);
    init_hidden_ = make_conv(store_, "dec.init0", conv3x3(top, 32), rng);
    init_out_ = make_conv(store_, "dec.init1", conv3x3(32, 1), rng);
    const AttentionMode mode = cfg_.attention_mode();
    for (int level = 1; level <= 5; ++level) {
      RefineModule<T>& m = refine_[level - 1];
      const std::string name = "dec.l" + std::to_string(level);
      const int chans = cfg_.fused_channels(level);
      m.multi_scale = cfg_.level_is_multi_scale(level);
      if (m.multi_scale) {
        m.mbam = make_mbam(store_, name, chans, mode, rng);
      } else {
        m.bam = make_bam(store_, name, chans, mode, rng);
      }
    }
  }

  const NetConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  // Depth input is ignored (and may be left undefined) when the depth stream
  // is ablated away.
  SaliencyOutputs<T> forward(const Tensor<T>& rgb,
                             const Tensor<T>& depth = {}) const {
    if (rgb.rank() != 4 || rgb.dim(2) != cfg_.input_h ||
        rgb.dim(3) != cfg_.input_w) {
      throw ConfigError("forward: rgb input must be [N,3," +
                        std::to_string(cfg_.input_h) + "," +
                        std::to_string(cfg_.input_w) + "]");
    }
    SaliencyOutputs<T> out;
    StreamOutput<T> rgb_out = stream_forward(rgb_, rgb);
    out.rgb_logits = rgb_out.logits;
    std::array<Tensor<T>, 6> fused;
    if (cfg_.depth_stream) {
      if (!depth.defined()) {
        throw ConfigError("forward: depth input required by configuration");
      }
      if (depth.shape() != rgb.shape()) {
        throw ConfigError("forward: rgb/depth shape mismatch");
      }
      StreamOutput<T> depth_out = stream_forward(*depth_, depth);
      out.depth_logits = depth_out.logits;
      fused = fuse_side_outputs(rgb_out, depth_out).fused;
    } else {
      fused = rgb_out.f;
    }
    out.logits[5] = predict_initial(fused[5], init_hidden_, init_out_);
    for (int level = 5; level >= 1; --level) {
      out.logits[level - 1] =
          refine_step(out.logits[level], fused[level - 1], refine_[level - 1]);
    }
    out.final = sigmoid(out.logits[0]);
    return out;
  }

  // Zeroes the five residual prediction heads, collapsing the decoder to a
  // pure upsampling chain.
  void zero_residual_heads() {
    for (auto& m : refine_) {
      Conv2d<T>& head = m.residual_head();
      std::fill(head.weight.values().begin(), head.weight.values().end(), T(0));
      if (head.bias) {
        std::fill(head.bias->values().begin(), head.bias->values().end(), T(0));
      }
    }
  }

  std::array<RefineModule<T>, 5>& refine_modules() { return refine_; }

 private:
  NetConfig cfg_;
  ParamStore<T> store_;
  StreamParams<T> rgb_;
  std::optional<StreamParams<T>> depth_;
  Conv2d<T> init_hidden_, init_out_;
  std::array<RefineModule<T>, 5> refine_;
};

}  // namespace bianet
