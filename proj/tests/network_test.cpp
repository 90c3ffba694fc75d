#include "bianet/network.hpp"

#include <gtest/gtest.h>

#include "bianet/rng.hpp"

namespace bianet {
namespace {

Tensor<float> random_image(int h, int w, Rng& rng) {
  std::vector<float> v(3 * h * w);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor<float>::from({1, 3, h, w}, std::move(v));
}

TEST(Network, ToyShapeLadderAndRange) {
  BiANet<float> net(NetConfig::toy(), 1);
  Rng rng(2);
  auto rgb = random_image(64, 64, rng);
  auto depth = random_image(64, 64, rng);
  auto out = net.forward(rgb, depth);

  const int want[6] = {64, 32, 16, 8, 4, 2};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(out.logits[i].dim(1), 1);
    EXPECT_EQ(out.logits[i].dim(2), want[i]);
    EXPECT_EQ(out.logits[i].dim(3), want[i]);
  }
  for (int i = 0; i + 1 < 6; ++i) {
    EXPECT_EQ(out.logits[i].dim(2), 2 * out.logits[i + 1].dim(2));
  }
  EXPECT_EQ(out.final.dim(2), 64);
  EXPECT_EQ(out.final.dim(3), 64);
  for (float v : out.final.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_EQ(out.supervised_count(), 8);
  ASSERT_TRUE(out.depth_logits.has_value());
  EXPECT_EQ(out.depth_logits->dim(2), 2);
  EXPECT_EQ(out.rgb_logits.dim(2), 2);
}

TEST(Network, Ladder224) {
  NetConfig cfg = NetConfig::toy();
  cfg.input_h = cfg.input_w = 224;
  BiANet<float> net(cfg, 3);
  Rng rng(4);
  auto rgb = random_image(224, 224, rng);
  auto depth = random_image(224, 224, rng);
  auto out = net.forward(rgb, depth);
  const int want[6] = {224, 112, 56, 28, 14, 7};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(out.logits[i].dim(2), want[i]);
}

TEST(Network, ZeroInitialHeadGivesZeroCoarseMapAndHalfAttention) {
  NetConfig cfg = NetConfig::toy();
  BiANet<float> net(cfg, 5);
  auto& store = net.params();
  for (auto& v : store.get("dec.init1.weight").values()) v = 0.0f;
  for (auto& v : store.get("dec.init1.bias").values()) v = 0.0f;
  Rng rng(6);
  auto rgb = random_image(64, 64, rng);
  auto depth = random_image(64, 64, rng);
  auto out = net.forward(rgb, depth);
  for (float v : out.logits[5].values()) EXPECT_EQ(v, 0.0f);
  auto att = attention_maps(out.logits[5], 4, 4);
  for (float v : att.foreground.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Network, RefineStepIdentities) {
  ParamStore<float> store;
  Rng rng(7);
  RefineModule<float> m;
  m.bam = make_bam(store, "m", 8, AttentionMode::bilateral, rng);
  for (auto& v : m.bam->pr_out.weight.values()) v = 0.0f;
  for (auto& v : m.bam->pr_out.bias->values()) v = 0.0f;

  auto feature = Tensor<float>::zeros({1, 8, 8, 8});
  for (auto& v : feature.values()) v = static_cast<float>(rng.uniform());
  auto next = Tensor<float>::zeros({1, 1, 4, 4});
  for (auto& v : next.values()) v = static_cast<float>(rng.uniform(-2.0, 2.0));

  // zero residual: the step is exactly the upsampled coarser logits
  auto step = refine_step(next, feature, m);
  auto up = upsample_bilinear(next, 8, 8);
  EXPECT_EQ(step.values(), up.values());

  // constant logits survive bilinear upsampling exactly
  auto c = Tensor<float>::full({1, 1, 4, 4}, 1.375f);
  auto stepc = refine_step(c, feature, m);
  for (float v : stepc.values()) EXPECT_EQ(v, 1.375f);
}

TEST(Network, RefineStepMatchesPrimitiveComposition) {
  ParamStore<float> store;
  Rng rng(8);
  RefineModule<float> m;
  m.bam = make_bam(store, "m", 8, AttentionMode::bilateral, rng);
  auto feature = Tensor<float>::zeros({1, 8, 8, 8});
  for (auto& v : feature.values()) v = static_cast<float>(rng.uniform());
  auto next = Tensor<float>::zeros({1, 1, 4, 4});
  for (auto& v : next.values()) v = static_cast<float>(rng.uniform(-2.0, 2.0));

  auto step = refine_step(next, feature, m);
  auto ref = eltwise(bam_forward(feature, next, *m.bam),
                     upsample_bilinear(next, 8, 8), Eltwise::add);
  EXPECT_EQ(step.values(), ref.values());
}

TEST(Network, ZeroResidualCollapseIsPureUpsampling) {
  BiANet<float> net(NetConfig::toy(), 9);
  net.zero_residual_heads();
  Rng rng(10);
  auto rgb = random_image(64, 64, rng);
  auto depth = random_image(64, 64, rng);
  auto out = net.forward(rgb, depth);

  Tensor<float> chain = out.logits[5];
  for (int size = 4; size <= 64; size *= 2) {
    chain = upsample_bilinear(chain, size, size);
  }
  auto ref = sigmoid(chain);
  EXPECT_EQ(out.final.values(), ref.values());
}

TEST(Network, ParamCountIncreasesWithMultiScaleCount) {
  std::int64_t prev = -1;
  for (int k = 0; k <= 5; ++k) {
    NetConfig cfg = NetConfig::toy();
    cfg.mbam_count = k;
    BiANet<float> net(cfg, 11);
    const std::int64_t count = net.params().total_elements();
    EXPECT_GT(count, prev) << "mbam_count " << k;
    prev = count;
  }
}

TEST(Network, DepthOffUsesRgbFeaturesOnly) {
  NetConfig cfg = NetConfig::toy();
  cfg.depth_stream = false;
  BiANet<float> net(cfg, 12);
  Rng rng(13);
  auto rgb = random_image(64, 64, rng);
  auto out = net.forward(rgb);
  EXPECT_FALSE(out.depth_logits.has_value());
  EXPECT_EQ(out.supervised_count(), 7);
  EXPECT_EQ(out.final.dim(2), 64);
  // no depth parameters exist in this configuration
  for (const auto& [name, t] : net.params().items()) {
    EXPECT_NE(name.rfind("depth.", 0), 0u) << name;
  }
}

TEST(Network, AblationModesBuildAndRun) {
  Rng rng(14);
  auto rgb = random_image(64, 64, rng);
  auto depth = random_image(64, 64, rng);
  for (int ff = 0; ff < 2; ++ff) {
    for (int bf = 0; bf < 2; ++bf) {
      NetConfig cfg = NetConfig::toy();
      cfg.ff = ff != 0;
      cfg.bf = bf != 0;
      cfg.mbam_count = 2;
      BiANet<float> net(cfg, 15);
      auto out = net.forward(rgb, depth);
      EXPECT_EQ(out.final.dim(2), 64);
    }
  }
}

TEST(Network, DeterministicAcrossInstances) {
  Rng rng(16);
  auto rgb = random_image(64, 64, rng);
  auto depth = random_image(64, 64, rng);
  BiANet<float> a(NetConfig::toy(), 17);
  BiANet<float> b(NetConfig::toy(), 17);
  auto oa = a.forward(rgb, depth);
  auto ob = b.forward(rgb, depth);
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(oa.logits[i].values(), ob.logits[i].values());
  }
  EXPECT_EQ(oa.final.values(), ob.final.values());
}

TEST(Network, InputSizeMismatchThrows) {
  BiANet<float> net(NetConfig::toy(), 18);
  Rng rng(19);
  auto rgb = random_image(32, 32, rng);
  auto depth = random_image(32, 32, rng);
  EXPECT_THROW(net.forward(rgb, depth), ConfigError);
}

TEST(Network, ConfigValidation) {
  NetConfig cfg = NetConfig::toy();
  cfg.mbam_count = 6;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = NetConfig::toy();
  cfg.input_h = 50;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace bianet
