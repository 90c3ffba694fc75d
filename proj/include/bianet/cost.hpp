#pragma once

#include <cstdint>

#include "bianet/network.hpp"

namespace bianet {

// Closed-form cost of a configuration at its input size. MACs count the
// convolutions (k^2 * Ci * Co per output position); the FLOP estimate is the
// usual 2x multiply-accumulate convention.
struct CostReport {
  std::int64_t param_count = 0;
  std::int64_t mac_count = 0;
  std::int64_t flop_estimate = 0;
};

namespace detail {

struct CostAcc {
  std::int64_t params = 0;
  std::int64_t macs = 0;

  void conv(int k, int ci, int co, int oh, int ow) {
    const std::int64_t weights = static_cast<std::int64_t>(k) * k * ci * co;
    params += weights + co;  // every conv carries a bias
    macs += weights * oh * ow;
  }
};

// Mirrors the refinement module layout in attention.hpp.
inline void refine_cost(CostAcc& acc, const NetConfig& cfg, int level, int oh,
                        int ow) {
  const int chans = cfg.fused_channels(level);
  const AttentionMode mode = cfg.attention_mode();
  const int width = 32;
  const int branch_count =
      mode == AttentionMode::bilateral ? 2 : 1;  // plain has one branch too
  if (cfg.level_is_multi_scale(level)) {
    for (int b = 0; b < branch_count; ++b) {
      acc.conv(1, chans, width, oh, ow);          // d1
      for (int d = 0; d < 3; ++d) acc.conv(3, chans, width, oh, ow);  // d2..d4
    }
    acc.conv(3, 4 * width * branch_count, width, oh, ow);  // joint hidden
  } else {
    acc.conv(1, chans, width, oh, ow);  // channel reduction
    for (int b = 0; b < branch_count; ++b) acc.conv(3, width, width, oh, ow);
    acc.conv(3, width * branch_count, width, oh, ow);
  }
  acc.conv(3, width, 1, oh, ow);  // residual map
}

}  // namespace detail

inline CostReport count_cost(const NetConfig& cfg) {
  cfg.validate();
  detail::CostAcc acc;
  const int streams = cfg.depth_stream ? 2 : 1;
  const int h = cfg.input_h;
  const int w = cfg.input_w;

  for (int s = 0; s < streams; ++s) {
    int in = 3;
    for (int b = 0; b < 5; ++b) {
      const int oh = h >> b, ow = w >> b;
      for (int d = 0; d < cfg.backbone.block_depths[b]; ++d) {
        acc.conv(3, in, cfg.backbone.block_widths[b], oh, ow);
        in = cfg.backbone.block_widths[b];
      }
    }
    const int oh6 = h / 32, ow6 = w / 32;
    acc.conv(3, in, cfg.backbone.extra_group_width, oh6, ow6);
    acc.conv(3, cfg.backbone.extra_group_width, cfg.backbone.extra_group_width,
             oh6, ow6);
    acc.conv(3, cfg.backbone.extra_group_width, 1, oh6, ow6);
  }

  acc.conv(3, cfg.fused_channels(6), 32, h / 32, w / 32);
  acc.conv(3, 32, 1, h / 32, w / 32);
  for (int level = 1; level <= 5; ++level) {
    detail::refine_cost(acc, cfg, level, h >> (level - 1), w >> (level - 1));
  }

  CostReport report;
  report.param_count = acc.params;
  report.mac_count = acc.macs;
  report.flop_estimate = 2 * acc.macs;
  return report;
}

}  // namespace bianet
