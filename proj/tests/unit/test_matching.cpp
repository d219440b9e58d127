#include "helpers.hpp"

using namespace fssuw;
using fssuw::testing::check_input_gradient;
using fssuw::testing::project;
using fssuw::testing::random_mask;
using fssuw::testing::random_tensor;
using fssuw::testing::throws_code;

namespace {

Tensor<double> features_2x2(std::initializer_list<double> v) { return Tensor<double>({1, 2, 2}, std::vector<double>(v)); }

Mask mask_2x2(std::initializer_list<std::uint8_t> v) { return Mask({2, 2}, std::vector<std::uint8_t>(v)); }

/// Per-pixel loop with the same accumulation order as the definition.
std::vector<double> brute_force_map(const Tensor<double>& f, const Mask& m) {
  const std::size_t c = f.dim(0), h = f.dim(1), w = f.dim(2);
  std::vector<double> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (m.at(y, x)) {
          acc += f.at(k, y, x);
          ++n;
        }
    out[k] = acc / static_cast<double>(n);
  }
  return out;
}

}  // namespace

TEST(MaskedAveragePool, ConstantFeatures) {
  Rng rng(0);
  const Tensor<double> f({5, 6, 6}, 2.0);
  Mask m = random_mask(6, 6, rng);
  m[0] = 1;
  for (double v : masked_average_pool(f, m).vector) EXPECT_EQ(v, 2.0);
}

TEST(MaskedAveragePool, HandExample) {
  const auto p = masked_average_pool(features_2x2({1, 3, 5, 7}), mask_2x2({1, 0, 1, 0}));
  ASSERT_EQ(p.vector.size(), 1u);
  EXPECT_EQ(p.vector[0], 3.0);
  EXPECT_EQ(p.polarity, Polarity::Foreground);
}

TEST(MaskedAveragePool, EmptyMaskRejected) {
  EXPECT_TRUE(throws_code([] { masked_average_pool(features_2x2({1, 3, 5, 7}), mask_2x2({0, 0, 0, 0})); },
                          ErrorCode::EmptyMask));
}

TEST(MaskedAveragePool, MaskIsNearestResampledToFeatureResolution) {
  Rng rng(1);
  const auto f = random_tensor<double>({3, 4, 4}, rng);
  Mask big({16, 16}, 0);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) big.at(y, x) = 1;
  Mask small({4, 4}, 0);
  small.at(0, 0) = small.at(0, 1) = small.at(1, 0) = small.at(1, 1) = 1;
  EXPECT_EQ(masked_average_pool(f, big).vector, masked_average_pool(f, small).vector);
  // A single-pixel target off the sampling grid vanishes.
  Mask speck({16, 16}, 0);
  speck.at(1, 1) = 1;
  EXPECT_TRUE(throws_code([&] { masked_average_pool(f, speck); }, ErrorCode::EmptyMask));
}

TEST(MaskedAveragePool, EqualsBruteForceBitwise) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t c = 1 + rng.below(16);
    const auto f = random_tensor<double>({c, 8, 8}, rng);
    Mask m = random_mask(8, 8, rng, rng.uniform());
    m[rng.below(64)] = 1;
    EXPECT_EQ(masked_average_pool(f, m).vector, brute_force_map(f, m));
  }
}

TEST(MaskedAveragePool, Linear) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto X = random_tensor<double>({4, 6, 6}, rng), Y = random_tensor<double>({4, 6, 6}, rng);
    const double a = rng.normal(), b = rng.normal();
    Tensor<double> Z(X.shape());
    for (std::size_t i = 0; i < Z.size(); ++i) Z[i] = a * X[i] + b * Y[i];
    Mask m = random_mask(6, 6, rng);
    m[0] = 1;
    const auto px = masked_average_pool(X, m).vector, py = masked_average_pool(Y, m).vector;
    const auto pz = masked_average_pool(Z, m).vector;
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(pz[k], a * px[k] + b * py[k], 1e-12);
  }
}

TEST(BackgroundPrototype, Examples) {
  const auto p = background_prototype(features_2x2({1, 3, 5, 7}), mask_2x2({1, 0, 1, 0}));
  EXPECT_EQ(p.vector[0], 5.0);
  EXPECT_EQ(p.polarity, Polarity::Background);
  EXPECT_TRUE(throws_code([] { background_prototype(features_2x2({1, 3, 5, 7}), mask_2x2({1, 1, 1, 1})); },
                          ErrorCode::EmptyMask));
  const Tensor<double> flat({3, 4, 4}, -1.5);
  Mask checker({4, 4});
  for (std::size_t i = 0; i < 16; ++i) checker[i] = ((i / 4 + i % 4) % 2) ? 1 : 0;
  EXPECT_EQ(background_prototype(flat, checker).vector, masked_average_pool(flat, checker).vector);
}

TEST(MergePrototypes, Examples) {
  const Prototype<double> p{{0.3, -1.0, 2.0}, Polarity::Foreground, 1};
  const auto five = merge_prototypes<double>({p, p, p, p, p});
  EXPECT_EQ(five.vector, p.vector);
  EXPECT_EQ(five.shots_merged, 5u);
  const auto half = merge_prototypes<double>({{{1, 0}, Polarity::Foreground, 1}, {{0, 1}, Polarity::Foreground, 1}});
  EXPECT_EQ(half.vector, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(merge_prototypes<double>({p}).vector, p.vector);
  EXPECT_TRUE(throws_code(
      [&] { merge_prototypes<double>({p, {{0.3, -1.0, 2.0}, Polarity::Background, 1}}); }, ErrorCode::PolarityMismatch));
}

TEST(Cosine, Examples) {
  EXPECT_NEAR(cosine<double>({0.2, -3, 4}, {0.2, -3, 4}), 1.0, 1e-15);
  EXPECT_EQ(cosine<double>({1, 0}, {0, 1}), 0.0);
  EXPECT_NEAR(cosine<double>({1, 0}, {1, 1}), 0.70710678118654752, 1e-15);
  EXPECT_EQ(cosine<double>({0, 0}, {1, 1}), 0.0);
}

TEST(Cosine, BoundedAndScaleInvariant) {
  Rng rng(4);
  for (int t = 0; t < 5000; ++t) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> u(n), v(n);
    for (auto& x : u) x = rng.normal() * std::pow(10.0, rng.uniform(-2, 2));
    for (auto& x : v) x = rng.normal();
    const double c = cosine(u, v);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    auto su = u;
    const double s = std::pow(10.0, rng.uniform(-3, 3));
    for (auto& x : su) x *= s;
    EXPECT_NEAR(cosine(su, v), c, 1e-12);
  }
}

TEST(CosineScore, PixelEqualToPrototypeScoresOne) {
  Rng rng(5);
  auto f = random_tensor<double>({4, 3, 3}, rng);
  const Prototype<double> fg{{f.at(0, 1, 2), f.at(1, 1, 2), f.at(2, 1, 2), f.at(3, 1, 2)}, Polarity::Foreground, 1};
  const Prototype<double> bg{{1, 0, 0, 0}, Polarity::Background, 1};
  const auto s = cosine_score(fg, bg, f);
  EXPECT_NEAR(s.fg_scores.at(1, 2), 1.0, 1e-15);
  for (double v : s.fg_scores.values()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(PredictMask, DominanceAndTies) {
  ScoreMap<double> s{Tensor<double>({3, 3}, 1.0), Tensor<double>({3, 3}, -1.0)};
  auto p = predict_mask(s, 12, 12);
  EXPECT_EQ(count_nonzero(p.mask), 144u);
  EXPECT_EQ(p.logits.shape(), (Shape{2, 12, 12}));
  s.bg_scores.fill(0.3);
  s.fg_scores.fill(0.3);
  EXPECT_EQ(count_nonzero(predict_mask(s, 12, 12).mask), 0u);
}

TEST(PredictMask, TemperatureDoesNotChangeMask) {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    ScoreMap<double> s{random_tensor<double>({5, 5}, rng, 0.5), random_tensor<double>({5, 5}, rng, 0.5)};
    const double a = rng.uniform(0.1, 50);
    EXPECT_EQ(predict_mask(s, 20, 20, a).mask, predict_mask(s, 20, 20, 2 * a).mask);
  }
}

TEST(PriorMask, SelfMatchReachesOne) {
  Rng rng(7);
  const auto f = random_tensor<double>({6, 4, 4}, rng);
  Mask m = random_mask(4, 4, rng, 0.4);
  m[5] = 1;
  m[6] = 0;
  const auto prior = prior_mask(f, f, m);
  for (std::size_t p = 0; p < 16; ++p)
    if (m[p]) {
      EXPECT_NEAR(prior.values[p], 1.0, 1e-12);
    }
}

TEST(PriorMask, ConstantFeaturesNormaliseToZero) {
  const Tensor<double> f({3, 4, 4}, 0.7);
  const auto prior = prior_mask(f, f, Mask({4, 4}, 1));
  for (double v : prior.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(PriorMask, TwoByTwoBruteForce) {
  // Two channels; support pixel (0,1) is the only masked one.
  const Tensor<double> fq({2, 2, 2}, std::vector<double>{1, 0, 2, -1, 0, 1, 1, 3});
  const Tensor<double> fs({2, 2, 2}, std::vector<double>{5, 1, 0, 0, 5, 1, 0, 0});
  const Mask m({2, 2}, std::vector<std::uint8_t>{0, 1, 0, 0});
  // Masked support vector (1, 1); query vectors per pixel:
  const double q[4][2] = {{1, 0}, {0, 1}, {2, 1}, {-1, 3}};
  double raw[4];
  for (int p = 0; p < 4; ++p) raw[p] = (q[p][0] + q[p][1]) / (std::hypot(q[p][0], q[p][1]) * std::sqrt(2.0));
  const double lo = *std::min_element(raw, raw + 4), hi = *std::max_element(raw, raw + 4);
  const auto prior = prior_mask(fq, fs, m);
  for (int p = 0; p < 4; ++p) EXPECT_NEAR(prior.values[static_cast<std::size_t>(p)], (raw[p] - lo) / (hi - lo), 1e-14);
}

TEST(PriorMask, BoundedAndBlindToUnmaskedSupportPixels) {
  Rng rng(8);
  for (int t = 0; t < 30; ++t) {
    const auto fq = random_tensor<double>({4, 5, 5}, rng);
    auto fs = random_tensor<double>({4, 5, 5}, rng);
    Mask m = random_mask(5, 5, rng, 0.3);
    m[12] = 1;
    const auto a = prior_mask(fq, fs, m);
    for (double v : a.values.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (std::size_t p = 0; p < 25; ++p)
      if (!m[p])
        for (std::size_t c = 0; c < 4; ++c) fs[c * 25 + p] = rng.normal() * 10;
    EXPECT_EQ(prior_mask(fq, fs, m).values, a.values);
  }
}

TEST(PriorMask, EmptySupportMaskRejected) {
  const Tensor<double> f({2, 3, 3}, 1.0);
  EXPECT_TRUE(throws_code([&] { prior_mask(f, f, Mask({3, 3}, 0)); }, ErrorCode::EmptyMask));
}

TEST(FragilityScore, Examples) {
  Mask gt({4, 4}, 0);
  gt.at(1, 1) = gt.at(1, 2) = gt.at(2, 1) = 1;
  PriorMask<double> perfect{Tensor<double>({4, 4})};
  for (std::size_t i = 0; i < 16; ++i) perfect.values[i] = gt[i];
  EXPECT_DOUBLE_EQ(fragility_score(perfect, gt), 1.0);
  PriorMask<double> flat{Tensor<double>({4, 4}, 0.4)};
  EXPECT_NEAR(fragility_score(flat, gt), 0.0, 1e-15);
  PriorMask<double> inverted{Tensor<double>({4, 4})};
  for (std::size_t i = 0; i < 16; ++i) inverted.values[i] = 1.0 - gt[i];
  EXPECT_DOUBLE_EQ(fragility_score(inverted, gt), -1.0);
  EXPECT_TRUE(throws_code([&] { fragility_score(flat, Mask({4, 4}, 1)); }, ErrorCode::DegenerateGT));
  EXPECT_TRUE(throws_code([&] { fragility_score(flat, Mask({4, 4}, 0)); }, ErrorCode::DegenerateGT));
}

TEST(MatchingGraph, TensorAndGraphPrototypesAgree) {
  Rng rng(9);
  const auto x = random_tensor<double>({3, 5, 4, 4}, rng);
  Mask m = random_mask(4, 4, rng);
  m[3] = 1;
  const auto graph = ag::masked_average_pool(ag::constant(x), 1, m).value();
  const auto direct = masked_average_pool(take(x, 1), m).vector;
  EXPECT_EQ(std::vector<double>(graph.values().begin(), graph.values().end()), direct);
}

TEST(MatchingGraph, GradientsMatchFiniteDifferences) {
  Rng rng(10);
  const auto x = random_tensor<double>({2, 5, 4, 4}, rng);
  const auto proto = random_tensor<double>({5}, rng);
  const auto r = random_tensor<double>({4, 4}, rng);
  const auto r2 = random_tensor<double>({5}, rng);
  Mask m = random_mask(4, 4, rng);
  m[0] = 1;
  auto via_x = [&](const ag::Var<double>& v) { return project(ag::cosine_map(v, 1, ag::constant(proto)), r); };
  EXPECT_LT(check_input_gradient(x, via_x).max_rel_error, 1e-6);
  auto via_p = [&](const ag::Var<double>& p) { return project(ag::cosine_map(ag::constant(x), 0, p), r); };
  EXPECT_LT(check_input_gradient(proto, via_p).max_rel_error, 1e-6);
  auto map = [&](const ag::Var<double>& v) { return project(ag::masked_average_pool(v, 1, m), r2); };
  EXPECT_LT(check_input_gradient(x, map).max_rel_error, 1e-6);
  const auto r3 = random_tensor<double>({2, 4, 4}, rng);
  auto logits = [&](const ag::Var<double>& v) {
    const auto c = ag::cosine_map(v, 0, ag::constant(proto));
    return project(ag::two_channel_logits(ag::scale(c, -1.0), c, 20.0), r3);
  };
  EXPECT_LT(check_input_gradient(x, logits).max_rel_error, 1e-6);
}
