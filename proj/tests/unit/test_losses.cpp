#include <numeric>

#include "helpers.hpp"

using namespace fssuw;
using fssuw::testing::check_input_gradient;
using fssuw::testing::random_mask;
using fssuw::testing::random_tensor;
using fssuw::testing::throws_code;

namespace {

/// Logits that put `margin` on the ground-truth channel at every pixel.
Tensor<double> confident_logits(const Mask& gt, double margin) {
  const std::size_t hw = gt.size();
  Tensor<double> l({2, gt.dim(0), gt.dim(1)}, 0.0);
  for (std::size_t p = 0; p < hw; ++p) l[(gt[p] ? hw : 0) + p] = margin;
  return l;
}

/// Extended-precision mask loss computed straight from the softmax
/// definition.
long double oracle_mask_loss(const Tensor<double>& logits, const Mask& gt, long double s = 1.0L) {
  const std::size_t hw = gt.size();
  long double ce = 0, inter = 0, sp = 0, sg = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    const long double l0 = logits[p], l1 = logits[hw + p];
    const long double m = std::max(l0, l1);
    const long double z = std::exp(l0 - m) + std::exp(l1 - m);
    const long double p1 = std::exp(l1 - m) / z;
    ce -= (gt[p] ? l1 - m : l0 - m) - std::log(z);
    inter += gt[p] ? p1 : 0;
    sp += p1;
    sg += gt[p] ? 1 : 0;
  }
  ce /= static_cast<long double>(hw);
  return ce + 1.0L - (2 * inter + s) / (sp + sg + s);
}

}  // namespace

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  Rng rng(0);
  Mask gt = random_mask(6, 6, rng);
  EXPECT_LT(cross_entropy(confident_logits(gt, 40.0), gt), 1e-8);
}

TEST(CrossEntropy, UniformLogitsGiveLog2) {
  Rng rng(1);
  Mask gt = random_mask(5, 7, rng);
  EXPECT_NEAR(cross_entropy(Tensor<double>({2, 5, 7}, 0.3), gt), std::log(2.0), 1e-9);
}

TEST(CrossEntropy, ShapeMismatchRejected) {
  EXPECT_TRUE(throws_code([] { cross_entropy(Tensor<double>({2, 4, 4}), Mask({4, 5})); }, ErrorCode::ShapeMismatch));
  EXPECT_TRUE(throws_code([] { cross_entropy(Tensor<double>({3, 4, 4}), Mask({4, 4})); }, ErrorCode::ShapeMismatch));
}

TEST(CrossEntropy, StableForHugeLogits) {
  Mask gt({1, 2}, std::vector<std::uint8_t>{0, 1});
  Tensor<double> l({2, 1, 2}, std::vector<double>{-800, 800, 800, -800});
  const double v = cross_entropy(l, gt);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 1600.0, 1e-9);
}

TEST(Dice, Examples) {
  Mask gt({4, 4}, 0);
  for (std::size_t i = 0; i < 5; ++i) gt[i] = 1;
  Tensor<double> perfect({4, 4});
  for (std::size_t i = 0; i < 16; ++i) perfect[i] = gt[i];
  EXPECT_NEAR(dice_loss(perfect, gt), 0.0, 1.0 / (2 * 5 + 1));
  EXPECT_NEAR(dice_loss(perfect, gt), 0.0, 1e-15);
  Tensor<double> disjoint({4, 4});
  for (std::size_t i = 0; i < 16; ++i) disjoint[i] = 1.0 - gt[i];
  // Sum p + sum g = 16 and no overlap.
  EXPECT_NEAR(dice_loss(disjoint, gt), 1.0 - 1.0 / (16.0 + 1.0), 1e-15);
  // Half-overlap without smoothing: p covers 2 of 4 gt pixels plus 2 others.
  Mask g2({1, 6}, std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0});
  Tensor<double> p2({1, 6}, std::vector<double>{1, 1, 0, 0, 1, 1});
  EXPECT_NEAR(dice_loss(p2, g2, 0.0), 0.5, 1e-15);
  Mask g3({1, 3}, std::vector<std::uint8_t>{1, 1, 0});
  Tensor<double> p3({1, 3}, std::vector<double>{1, 0, 0});
  EXPECT_NEAR(dice_loss(p3, g3, 0.0), 1.0 / 3.0, 1e-15);
}

TEST(Dice, MonotoneAlongPathToGroundTruth) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Mask gt = random_mask(6, 6, rng);
    Tensor<double> p0({6, 6});
    for (auto& v : p0.values()) v = rng.uniform();
    double prev = 2.0;
    for (int i = 0; i <= 20; ++i) {
      const double t = i / 20.0;
      Tensor<double> p({6, 6});
      for (std::size_t k = 0; k < 36; ++k) p[k] = (1 - t) * p0[k] + t * gt[k];
      const double d = dice_loss(p, gt);
      EXPECT_LE(d, prev + 1e-15);
      EXPECT_GE(d, 0.0);
      EXPECT_LE(d, 1.0);
      prev = d;
    }
  }
}

TEST(MaskLoss, IsCrossEntropyPlusDice) {
  Rng rng(3);
  const auto l = random_tensor<double>({2, 6, 6}, rng, 3.0);
  const Mask gt = random_mask(6, 6, rng);
  const auto m = mask_loss(l, gt);
  EXPECT_EQ(m.value, m.ce + m.dice);
  EXPECT_EQ(m.ce, cross_entropy(l, gt));
  EXPECT_EQ(m.dice, dice_loss(softmax_foreground(l), gt));
}

TEST(MaskLoss, MatchesExtendedPrecisionOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
    const auto l = random_tensor<double>({2, h, w}, rng, rng.uniform(0.1, 30));
    const Mask gt = random_mask(h, w, rng);
    EXPECT_NEAR(mask_loss(l, gt).value, static_cast<double>(oracle_mask_loss(l, gt)), 1e-10);
  }
}

TEST(MaskLoss, GraphValueMatchesTensorValue) {
  Rng rng(5);
  const auto l = random_tensor<double>({2, 7, 5}, rng, 2.0);
  const Mask gt = random_mask(7, 5, rng);
  const auto g = ag::mask_loss(ag::constant(l), gt);
  const auto t = mask_loss(l, gt);
  EXPECT_NEAR(g.value.item(), t.value, 1e-14);
  EXPECT_NEAR(g.ce.item(), t.ce, 1e-14);
  EXPECT_NEAR(g.dice.item(), t.dice, 1e-14);
}

TEST(MaskLoss, NonNegative) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto l = random_tensor<double>({2, 4, 4}, rng, rng.uniform(0, 50));
    const auto m = mask_loss(l, random_mask(4, 4, rng));
    EXPECT_GE(m.ce, 0.0);
    EXPECT_GE(m.dice, 0.0);
    EXPECT_LE(m.dice, 1.0);
  }
}

TEST(MaskLoss, InvariantToConsistentPixelPermutation) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto l = random_tensor<double>({2, 1, 30}, rng, 4.0);
    const Mask gt = random_mask(1, 30, rng);
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Tensor<double> lp(l.shape());
    Mask gp(gt.shape());
    for (std::size_t i = 0; i < 30; ++i) {
      lp[i] = l[perm[i]];
      lp[30 + i] = l[30 + perm[i]];
      gp[i] = gt[perm[i]];
    }
    EXPECT_NEAR(mask_loss(lp, gp).value, mask_loss(l, gt).value, 1e-12);
  }
}

TEST(MaskLoss, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto l = random_tensor<double>({2, 8, 8}, rng, 2.0);
    const Mask gt = random_mask(8, 8, rng);
    auto f = [&](const ag::Var<double>& v) { return ag::mask_loss(v, gt).value; };
    EXPECT_LT(check_input_gradient(l, f).max_rel_error, 1e-4);
  }
}

TEST(MaskLoss, ConfidentLogitsHaveVanishingCrossEntropyGradient) {
  Rng rng(9);
  const Mask gt = random_mask(6, 6, rng);
  ag::Var<double> v(confident_logits(gt, 40.0), true);
  ag::backward(ag::cross_entropy(v, gt));
  const auto gs = v.grad();
  for (double g : gs.values()) EXPECT_LT(std::abs(g), 1e-12);
}

TEST(TotalLoss, Examples) {
  const auto a = total_loss(0.5, 0.25, 0.1);
  EXPECT_DOUBLE_EQ(a.mask_loss, 0.75);
  EXPECT_DOUBLE_EQ(a.total, 0.85);
  const auto b = total_loss(0.5, 0.25, 0.1, false);
  EXPECT_DOUBLE_EQ(b.align_loss, 0.0);
  EXPECT_DOUBLE_EQ(b.total, 0.75);
}

namespace {

/// Features with one-hot channels: foreground pixels point along e0 and
/// background along e1, so prototypes from any correct mask are orthogonal.
Tensor<double> one_hot_features(const Mask& gt, std::size_t channels = 4) {
  const std::size_t hw = gt.size();
  Tensor<double> f({channels, gt.dim(0), gt.dim(1)}, 0.0);
  for (std::size_t p = 0; p < hw; ++p) f[(gt[p] ? 0 : hw) + p] = 1.0;
  return f;
}

Mask blob(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t s) {
  Mask m({h, w}, 0);
  for (std::size_t y = y0; y < y0 + s; ++y)
    for (std::size_t x = x0; x < x0 + s; ++x) m.at(y, x) = 1;
  return m;
}

}  // namespace

TEST(AlignLoss, SelfConsistentPredictionIsNearZero) {
  const Mask gq = blob(8, 8, 2, 2, 4), gs = blob(8, 8, 1, 3, 3);
  const auto fq = one_hot_features(gq), fs = one_hot_features(gs);
  const auto logits = confident_logits(gq, 5.0);
  std::vector<double> per;
  const double v = align_loss<double>({fs}, fq, logits, {gs}, 20.0, &per);
  EXPECT_LT(v, 1e-6);
  ASSERT_EQ(per.size(), 1u);
}

TEST(AlignLoss, FiveShotIsMeanOfPerSupportLosses) {
  Rng rng(10);
  std::vector<Tensor<double>> fs;
  std::vector<Mask> gts;
  for (int i = 0; i < 5; ++i) {
    fs.push_back(random_tensor<double>({6, 8, 8}, rng));
    Mask g = random_mask(8, 8, rng);
    g[0] = 1;
    gts.push_back(g);
  }
  const auto fq = random_tensor<double>({6, 8, 8}, rng);
  Mask pred = random_mask(8, 8, rng);
  pred[0] = 1;
  pred[1] = 0;
  const auto logits = confident_logits(pred, 1.0);
  std::vector<double> per;
  const double v = align_loss(fs, fq, logits, gts, 20.0, &per);
  ASSERT_EQ(per.size(), 5u);
  EXPECT_NEAR(v, std::accumulate(per.begin(), per.end(), 0.0) / 5.0, 1e-12);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(per[i], align_loss<double>({fs[i]}, fq, logits, {gts[i]}), 1e-12);
}

TEST(AlignLoss, DegeneratePredictionGivesZero) {
  Rng rng(11);
  const auto f = random_tensor<double>({4, 8, 8}, rng);
  const Mask g = blob(8, 8, 0, 0, 4);
  EXPECT_EQ(align_loss<double>({f}, f, confident_logits(Mask({8, 8}, 0), 3.0), {g}), 0.0);
  EXPECT_EQ(align_loss<double>({f}, f, confident_logits(Mask({8, 8}, 1), 3.0), {g}), 0.0);
}

TEST(AlignLoss, FeatureGradientMatchesFiniteDifferences) {
  Rng rng(12);
  const auto feats = random_tensor<double>({2, 3, 6, 6}, rng);
  const Mask pred = blob(6, 6, 1, 1, 3);
  const auto logits = confident_logits(pred, 2.0);
  const Mask gt = blob(12, 12, 2, 4, 6);
  auto f = [&](const ag::Var<double>& v) { return ag::align_loss(v, logits, {gt}, 20.0); };
  EXPECT_LT(check_input_gradient(feats, f).max_rel_error, 1e-4);
}
