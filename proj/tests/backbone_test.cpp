#include "bianet/backbone.hpp"

#include <gtest/gtest.h>

#include "bianet/rng.hpp"

namespace bianet {
namespace {

Tensor<float> random_image(int h, int w, Rng& rng) {
  std::vector<float> v(3 * h * w);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor<float>::from({1, 3, h, w}, std::move(v));
}

// Closed form: sum of k*k*Ci*Co over the five VGG blocks (weights only).
std::int64_t vgg_conv_weight_count(const BackboneConfig& cfg) {
  std::int64_t total = 0;
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    for (int d = 0; d < cfg.block_depths[b]; ++d) {
      total += 9LL * in * cfg.block_widths[b];
      in = cfg.block_widths[b];
    }
  }
  return total;
}

TEST(Backbone, SameSeedSameParameters) {
  auto a = build_backbone<float>(BackboneConfig::toy(), 42);
  auto b = build_backbone<float>(BackboneConfig::toy(), 42);
  ASSERT_EQ(a.store.size(), b.store.size());
  for (std::size_t i = 0; i < a.store.size(); ++i) {
    EXPECT_EQ(a.store.items()[i].first, b.store.items()[i].first);
    EXPECT_EQ(a.store.items()[i].second.values(),
              b.store.items()[i].second.values());
  }
  auto c = build_backbone<float>(BackboneConfig::toy(), 43);
  EXPECT_NE(a.store.items()[0].second.values(),
            c.store.items()[0].second.values());
}

TEST(Backbone, FullScaleParameterCounts) {
  const auto cfg = BackboneConfig::full_scale();
  EXPECT_EQ(vgg_conv_weight_count(cfg), 14710464);

  auto bb = build_backbone<float>(cfg, 7);
  std::int64_t vgg_weights = 0, vgg_biases = 0;
  for (const auto& block : bb.rgb.blocks) {
    for (const auto& conv : block) {
      vgg_weights += conv.weight.numel();
      vgg_biases += conv.bias->numel();
    }
  }
  EXPECT_EQ(vgg_weights, 14710464);
  EXPECT_EQ(vgg_biases, 4224);

  // extra group: two 512-wide 3x3 convs plus the single-channel tap
  EXPECT_EQ(bb.rgb.block6_a.weight.numel(), 9LL * 512 * 512);
  EXPECT_EQ(bb.rgb.block6_b.weight.numel(), 9LL * 512 * 512);
  EXPECT_EQ(bb.rgb.head.weight.numel(), 9LL * 512);
}

TEST(Backbone, ToyParameterCountsMatchClosedForm) {
  const auto cfg = BackboneConfig::toy();
  auto bb = build_backbone<float>(cfg, 7);
  std::int64_t weights = 0;
  for (const auto& block : bb.rgb.blocks) {
    for (const auto& conv : block) weights += conv.weight.numel();
  }
  EXPECT_EQ(weights, vgg_conv_weight_count(cfg));
}

TEST(Backbone, SpatialLadder224) {
  auto bb = build_backbone<float>(BackboneConfig::toy(), 3);
  Rng rng(1);
  auto img = random_image(224, 224, rng);
  auto out = stream_forward(bb.rgb, img);
  const int want[6] = {224, 112, 56, 28, 14, 7};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(out.f[i].dim(2), want[i]) << "level " << i + 1;
    EXPECT_EQ(out.f[i].dim(3), want[i]);
  }
  EXPECT_EQ(out.logits.dim(1), 1);
  EXPECT_EQ(out.logits.dim(2), 7);
}

TEST(Backbone, SpatialLadderToy64) {
  auto bb = build_backbone<float>(BackboneConfig::toy(), 3);
  Rng rng(2);
  auto img = random_image(64, 64, rng);
  auto out = stream_forward(bb.rgb, img);
  const int want[6] = {64, 32, 16, 8, 4, 2};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(out.f[i].dim(2), want[i]);
}

TEST(Backbone, IndivisibleInputThrows) {
  auto bb = build_backbone<float>(BackboneConfig::toy(), 3);
  auto img = Tensor<float>::zeros({1, 3, 48, 64});
  EXPECT_THROW(stream_forward(bb.rgb, img), ConfigError);
}

TEST(Backbone, ZeroImageZeroBiasGivesZeroFeatures) {
  auto bb = build_backbone<float>(BackboneConfig::toy(), 11);
  auto img = Tensor<float>::zeros({1, 3, 64, 64});
  auto out = stream_forward(bb.rgb, img);
  for (const auto& f : out.f) {
    for (float v : f.values()) ASSERT_EQ(v, 0.0f);
  }
  for (float v : out.logits.values()) ASSERT_EQ(v, 0.0f);
}

TEST(Backbone, StreamIndependence) {
  auto bb = build_backbone<float>(BackboneConfig::toy(), 5);
  Rng rng(9);
  auto img = random_image(64, 64, rng);
  auto before = stream_forward(bb.rgb, img);
  for (auto& [name, t] : bb.store.items()) {
    if (name.rfind("depth.", 0) == 0) {
      for (auto& v : t.values()) v += 1.0f;
    }
  }
  auto after = stream_forward(bb.rgb, img);
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(before.f[i].values(), after.f[i].values());
  }
}

TEST(Backbone, FuseChannelsAndOrder) {
  auto bb = build_backbone<float>(BackboneConfig::full_scale(), 13);
  Rng rng(4);
  auto img = random_image(32, 32, rng);  // smallest divisible size
  auto rgb = stream_forward(bb.rgb, img);
  auto dep = stream_forward(bb.depth, img);
  auto side = fuse_side_outputs(rgb, dep);
  const int widths[6] = {64, 128, 256, 512, 512, 512};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(side.fused[i].dim(1), 2 * widths[i]);
  }
  EXPECT_EQ(side.fused[4].dim(1), 1024);
  EXPECT_EQ(side.fused[0].dim(1), 128);

  // first half of the fused channels is the RGB feature, bit for bit
  auto first = slice_channels(side.fused[4], 0, 512);
  EXPECT_EQ(first.values(), rgb.f[4].values());

  // resolution ladder of the fused maps
  for (int i = 0; i + 1 < 6; ++i) {
    EXPECT_EQ(side.fused[i].dim(2), 2 * side.fused[i + 1].dim(2));
  }
}

TEST(Backbone, DeterministicForward) {
  auto bb = build_backbone<float>(BackboneConfig::toy(), 21);
  Rng rng(6);
  auto img = random_image(64, 64, rng);
  auto a = stream_forward(bb.rgb, img);
  auto b = stream_forward(bb.rgb, img);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(a.f[i].values(), b.f[i].values());
  EXPECT_EQ(a.logits.values(), b.logits.values());
}

}  // namespace
}  // namespace bianet
