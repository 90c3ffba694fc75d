#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bianet/layers.hpp"
#include "bianet/rng.hpp"
#include "bianet/tensor.hpp"

namespace bianet {

// VGG-style encoder configuration, one instance shared by both streams.
struct BackboneConfig {
  std::array<int, 5> block_widths = {64, 128, 256, 512, 512};
  std::array<int, 5> block_depths = {2, 2, 3, 3, 3};
  int extra_group_width = 512;  // width of the extra convolution group
  bool toy_scale = false;

  static BackboneConfig full_scale() { return {}; }

  // Small preset for fast tests and desk-scale training.
  static BackboneConfig toy() {
    BackboneConfig c;
    c.block_widths = {8, 16, 32, 64, 64};
    c.block_depths = {1, 1, 2, 2, 2};
    c.extra_group_width = 64;
    c.toy_scale = true;
    return c;
  }

  void validate() const {
    for (int w : block_widths) {
      if (w < 1) throw ConfigError("backbone: widths must be >= 1");
    }
    for (int d : block_depths) {
      if (d < 1) throw ConfigError("backbone: depths must be >= 1");
    }
    if (extra_group_width < 1) {
      throw ConfigError("backbone: extra group width must be >= 1");
    }
  }

  bool operator==(const BackboneConfig&) const = default;
};

// One encoder stream: five conv blocks, then an extra three-conv group whose
// first two convs produce the level-6 feature and whose last conv taps the
// single-channel stream prediction.
template <typename T>
struct StreamParams {
  std::array<std::vector<Conv2d<T>>, 5> blocks;
  Conv2d<T> block6_a, block6_b;
  Conv2d<T> head;
};

template <typename T>
struct StreamOutput {
  std::array<Tensor<T>, 6> f;  // f[i] is the level-(i+1) side feature
  Tensor<T> logits;            // stream prediction, 1 channel at f[5] size
};

template <typename T>
StreamParams<T> build_stream(ParamStore<T>& store, const BackboneConfig& cfg,
                             const std::string& prefix, Rng& rng) {
  cfg.validate();
  StreamParams<T> p;
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    for (int d = 0; d < cfg.block_depths[b]; ++d) {
      const std::string name = prefix + ".block" + std::to_string(b + 1) +
                               ".conv" + std::to_string(d);
      p.blocks[b].push_back(
          make_conv(store, name, conv3x3(in, cfg.block_widths[b]), rng));
      in = cfg.block_widths[b];
    }
  }
  p.block6_a = make_conv(store, prefix + ".block6.conv0",
                         conv3x3(in, cfg.extra_group_width), rng);
  p.block6_b = make_conv(store, prefix + ".block6.conv1",
                         conv3x3(cfg.extra_group_width, cfg.extra_group_width),
                         rng);
  p.head = make_conv(store, prefix + ".block6.head",
                     conv3x3(cfg.extra_group_width, 1), rng);
  return p;
}

// Standalone two-stream parameter set (the full network embeds the same
// layout inside its own store).
template <typename T>
struct Backbone {
  BackboneConfig config;
  ParamStore<T> store;
  StreamParams<T> rgb, depth;
};

template <typename T>
Backbone<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  Backbone<T> b;
  b.config = cfg;
  Rng rng(seed);
  b.rgb = build_stream(b.store, cfg, "rgb", rng);
  b.depth = build_stream(b.store, cfg, "depth", rng);
  return b;
}

// Runs one stream on a [N,3,H,W] image, H and W divisible by 32. Side
// features come out at H, H/2, H/4, H/8, H/16, H/32.
template <typename T>
StreamOutput<T> stream_forward(const StreamParams<T>& p, const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw ConfigError("stream_forward: input must be [N,3,H,W]");
  }
  if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0) {
    throw ConfigError("stream_forward: spatial extents must be divisible by 32");
  }
  StreamOutput<T> out;
  Tensor<T> cur = x;
  for (int b = 0; b < 5; ++b) {
    if (b > 0) cur = max_pool2d(cur);
    for (const auto& conv : p.blocks[b]) cur = relu(conv(cur));
    out.f[b] = cur;
  }
  Tensor<T> x6 = max_pool2d(cur);
  x6 = relu(p.block6_a(x6));
  x6 = relu(p.block6_b(x6));
  out.f[5] = x6;
  out.logits = p.head(x6);
  return out;
}

// Per-level stream features and their channel concatenation.
template <typename T>
struct SideFeatures {
  std::array<Tensor<T>, 6> f_rgb;
  std::array<Tensor<T>, 6> f_d;
  std::array<Tensor<T>, 6> fused;
};

template <typename T>
SideFeatures<T> fuse_side_outputs(const StreamOutput<T>& rgb,
                                  const StreamOutput<T>& depth) {
  SideFeatures<T> s;
  for (int i = 0; i < 6; ++i) {
    const auto& a = rgb.f[i];
    const auto& b = depth.f[i];
    if (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
      throw ConfigError("fuse_side_outputs: spatial mismatch at level " +
                        std::to_string(i + 1));
    }
    s.f_rgb[i] = a;
    s.f_d[i] = b;
    s.fused[i] = concat_channels<T>({a, b});
  }
  return s;
}

}  // namespace bianet
