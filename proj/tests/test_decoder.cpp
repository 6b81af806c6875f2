#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace odf {
namespace {

using testing::random_tensor;

void zero_branch(LbfrParams& p) {
  for (Tensor* t : {&p.separable.horizontal.weight, &p.separable.vertical.weight, &p.squeeze.weight,
                    &p.expand.weight, &p.expand.bias})
    for (auto& v : t->data()) v = 0.0;
}

TEST(Lbfr, ZeroBranchIsResidualIdentity) {
  Rng rng(1);
  LbfrParams p = make_lbfr(rng, 8);
  zero_branch(p);
  Tensor fe = random_tensor(rng, {2, 8, 4, 4});
  EXPECT_TRUE(testing::bit_equal(lbfr(fe, p, Mode::train), fe));
}

TEST(Lbfr, ShapePreserved) {
  Rng rng(2);
  LbfrParams p = make_lbfr(rng, 32);
  EXPECT_EQ(lbfr(random_tensor(rng, {1, 32, 8, 8}), p, Mode::train).shape(), (Shape{1, 32, 8, 8}));
  EXPECT_THROW(make_lbfr(rng, 6), ConfigError);
}

TEST(Lbfr, Gradcheck) {
  Rng rng(3);
  LbfrParams lp = make_lbfr(rng, 4);
  std::vector<Tensor> in{random_tensor(rng, {1, 4, 6, 6})};
  NamedTensors named;
  collect(named, "lbfr", lp);
  for (auto& t : named) in.push_back(t.tensor);
  auto r = testing::check_grad("lbfr", in,
                               [lp](const auto& x) {
                                 LbfrParams p = lp;
                                 return lbfr(x[0], p, Mode::train);
                               },
                               1e-4);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Lbfr, SeparableImpulseSupportIsSevenBySeven) {
  Rng rng(4);
  LbfrParams p = make_lbfr(rng, 8);
  // Positive weights rule out accidental cancellation inside the support.
  for (Tensor* t : {&p.separable.horizontal.weight, &p.separable.vertical.weight})
    for (auto& v : t->data()) v = std::abs(v) + 1e-3;
  for (Tensor* t : {&p.separable.horizontal.bias, &p.separable.vertical.bias})
    for (auto& v : t->data()) v = 0.0;
  const std::size_t S = 17, c = 8;
  for (std::size_t ch = 0; ch < 8; ++ch) {
    Tensor x({1, 8, S, S});
    x[(ch * S + c) * S + c] = 1.0;
    Tensor y = separable_conv(x, p.separable);
    std::size_t rmin = S, rmax = 0, cmin = S, cmax = 0, nonzero = 0;
    for (std::size_t o = 0; o < 8; ++o)
      for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j)
          if (y[(o * S + i) * S + j] != 0.0) {
            rmin = std::min(rmin, i), rmax = std::max(rmax, i);
            cmin = std::min(cmin, j), cmax = std::max(cmax, j);
            if (o == 0) ++nonzero;
          }
    EXPECT_EQ(rmax - rmin + 1, 7u);
    EXPECT_EQ(cmax - cmin + 1, 7u);
    EXPECT_EQ(nonzero, 49u);
  }
}

TEST(Lbfr, SpatialStrategyOrdering) {
  for (std::size_t C : {4u, 8u, 32u, 512u}) {
    const auto s = spatial_strategy_counts(C);
    EXPECT_LT(s.separable_pair, s.three_3x3);
    EXPECT_LT(s.three_3x3, s.conv3x3_then_5x5);
    EXPECT_LT(s.conv3x3_then_5x5, s.single_7x7);
  }
  const auto s8 = spatial_strategy_counts(8);
  EXPECT_EQ(s8.separable_pair, 896u);
  EXPECT_EQ(s8.three_3x3, 1728u);
  EXPECT_EQ(s8.conv3x3_then_5x5, 2176u);
  EXPECT_EQ(s8.single_7x7, 3136u);
}

TEST(Lbfr, WholeModuleLighterThanDenseStrategies) {
  Rng rng(5);
  for (std::size_t C : {8u, 32u}) {
    LbfrParams p = make_lbfr(rng, C);
    NamedTensors named;
    collect(named, "lbfr", p);
    const auto s = spatial_strategy_counts(C);
    EXPECT_LT(count(named), s.three_3x3) << C;
  }
}

TEST(PyramidFuse, SingleLevelPassesThrough) {
  Rng rng(6);
  Tensor a = random_tensor(rng, {1, 2, 4, 4});
  auto out = pyramid_fuse({a});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].same_storage(a));
}

TEST(PyramidFuse, ConstantTopPropagates) {
  std::vector<Tensor> levels{Tensor({1, 2, 8, 8}), Tensor({1, 2, 4, 4}), Tensor({1, 2, 2, 2}, 1.75)};
  for (const auto& f : pyramid_fuse(levels))
    for (double v : f.data()) EXPECT_NEAR(v, 1.75, 1e-15);
}

TEST(PyramidFuse, ThreeLevelExpansion) {
  Rng rng(7);
  Tensor r1 = random_tensor(rng, {2, 3, 8, 8}), r2 = random_tensor(rng, {2, 3, 4, 4}), r3 = random_tensor(rng, {2, 3, 2, 2});
  auto out = pyramid_fuse({r1, r2, r3});
  Tensor f2 = add(r2, bilinear_resize(r3, 4, 4));
  Tensor f1 = add(r1, bilinear_resize(f2, 8, 8));
  EXPECT_LE(testing::max_abs_diff(out[0], f1), 1e-12);
  EXPECT_LE(testing::max_abs_diff(out[1], f2), 1e-12);
  EXPECT_TRUE(testing::bit_equal(out[2], r3));
}

TEST(PyramidFuse, RejectsBadRatio) {
  EXPECT_THROW(pyramid_fuse({Tensor({1, 2, 8, 8}), Tensor({1, 2, 3, 3})}), ShapeError);
}

TEST(SegHead, OutputShape) {
  Rng rng(8);
  Conv2dParams head = make_conv(rng, 2, 8, 3, 3, {1, 1}, {1, 1}, {1, 1});
  Tensor y = seg_head({random_tensor(rng, {3, 4, 16, 16}), random_tensor(rng, {3, 4, 8, 8})}, head, 64, 64);
  EXPECT_EQ(y.shape(), (Shape{3, 2, 64, 64}));
}

TEST(SegHead, ZeroWeightsGiveBiasEverywhere) {
  Rng rng(9);
  Conv2dParams head = make_conv(rng, 2, 4, 3, 3, {1, 1}, {1, 1}, {1, 1});
  for (auto& v : head.weight.data()) v = 0.0;
  head.bias[0] = -0.5;
  head.bias[1] = 2.25;
  Tensor y = seg_head({random_tensor(rng, {1, 2, 4, 4}), random_tensor(rng, {1, 2, 2, 2})}, head, 16, 16);
  for (std::size_t i = 0; i < 256; ++i) {
    EXPECT_NEAR(y[i], -0.5, 1e-15);
    EXPECT_NEAR(y[256 + i], 2.25, 1e-15);
  }
}

TEST(SegHead, RejectsSingleClass) {
  Rng rng(10);
  Conv2dParams head = make_conv(rng, 1, 2, 3, 3, {1, 1}, {1, 1}, {1, 1});
  EXPECT_THROW(seg_head({Tensor({1, 2, 4, 4})}, head, 16, 16), ConfigError);
  EXPECT_THROW(make_decoder(rng, {4}, 8, 1), ConfigError);
}

TEST(SegHead, EveryLevelMatters) {
  Rng rng(11);
  Conv2dParams head = make_conv(rng, 2, 9, 3, 3, {1, 1}, {1, 1}, {1, 1});
  std::vector<Tensor> fused{random_tensor(rng, {1, 3, 8, 8}), random_tensor(rng, {1, 3, 4, 4}),
                            random_tensor(rng, {1, 3, 2, 2})};
  Tensor base = seg_head(fused, head, 32, 32);
  for (std::size_t lvl = 0; lvl < 3; ++lvl) {
    auto bumped = fused;
    bumped[lvl] = add(fused[lvl], Tensor(fused[lvl].shape(), 0.1));
    EXPECT_GT(testing::max_abs_diff(seg_head(bumped, head, 32, 32), base), 1e-6) << lvl;
  }
}

TEST(SegHead, Gradcheck) {
  Rng rng(12);
  Conv2dParams head = make_conv(rng, 2, 4, 3, 3, {1, 1}, {1, 1}, {1, 1});
  auto r = testing::check_grad("seg_head", {random_tensor(rng, {1, 2, 4, 4}), random_tensor(rng, {1, 2, 2, 2}), head.weight, head.bias},
                               [head](const auto& x) {
                                 Conv2dParams h = head;
                                 h.weight = x[2];
                                 h.bias = x[3];
                                 return seg_head({x[0], x[1]}, h, 16, 16);
                               },
                               1e-4);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Decoder, ZeroBranchesReduceToLateralFpn) {
  Rng rng(13);
  DecoderParams p = make_decoder(rng, {4, 8, 16}, 8, 2);
  for (auto& l : p.lbfr) zero_branch(l);
  EncoderOutput enc{{random_tensor(rng, {1, 4, 8, 8}), random_tensor(rng, {1, 8, 4, 4}), random_tensor(rng, {1, 16, 2, 2})}};
  std::vector<Tensor> lateral;
  for (std::size_t i = 0; i < 3; ++i) lateral.push_back(conv2d(enc.pyramid[i], p.lateral[i]));
  Tensor fpn = seg_head(pyramid_fuse(lateral), p.head, 32, 32);
  EXPECT_TRUE(testing::bit_equal(decoder_forward(enc, p, 32, 32, Mode::train), fpn));
}

TEST(Decoder, LevelCountMismatch) {
  Rng rng(14);
  DecoderParams p = make_decoder(rng, {4, 8}, 8, 2);
  EXPECT_THROW(decoder_forward(EncoderOutput{{Tensor({1, 4, 8, 8})}}, p, 32, 32, Mode::train), ShapeError);
}

TEST(Model, DeskForwardShapeAndFinite) {
  Model model(ModelConfig{});
  Rng rng(15);
  Tensor logits = model.forward(random_tensor(rng, {1, 3, 64, 64}), Mode::train);
  EXPECT_EQ(logits.shape(), (Shape{1, 2, 64, 64}));
  for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
  EncoderOutput enc = model.encode(random_tensor(rng, {1, 3, 64, 64}));
  const std::vector<Shape> expect{{1, 16, 16, 16}, {1, 32, 8, 8}, {1, 64, 4, 4}, {1, 128, 2, 2}};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(enc.pyramid[i].shape(), expect[i]);
}

TEST(Model, FullyConvolutional) {
  Model model(ModelConfig{});
  Rng rng(16);
  Tensor logits = model.forward(random_tensor(rng, {1, 3, 128, 128}), Mode::train);
  EXPECT_EQ(logits.shape(), (Shape{1, 2, 128, 128}));
  EXPECT_THROW(model.forward(Tensor({1, 3, 60, 64}), Mode::train), ShapeError);
  EXPECT_THROW(model.forward(Tensor({1, 1, 64, 64}), Mode::train), ShapeError);
}

TEST(Model, TinyEndToEndGradcheck) {
  for (const auto& c : gradcheck_cases(3)) {
    if (c.name != "model_end_to_end") continue;
    Rng rng(3);
    const auto r = run_case(c, 1e-4, 1e-5, rng);
    EXPECT_TRUE(r.passed()) << r.max_rel_error;
    return;
  }
  FAIL() << "model case missing";
}

TEST(Model, SeedDeterminesWeights) {
  ModelConfig cfg;
  Model a(cfg), b(cfg);
  cfg.seed = 1;
  Model c(cfg);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(testing::bit_equal(pa[i].tensor, pb[i].tensor));
    differs = differs || !testing::bit_equal(pa[i].tensor, pc[i].tensor);
  }
  EXPECT_TRUE(differs);
}

}  // namespace
}  // namespace odf
