#include "helpers.hpp"

using namespace fssuw;
using fssuw::testing::check_input_gradient;
using fssuw::testing::project;
using fssuw::testing::random_tensor;
using fssuw::testing::throws_code;

namespace {

template <typename T>
struct FusionRig {
  ParamSet<T> params;
  std::unique_ptr<Fusion<T>> fusion;
};

template <typename T>
std::unique_ptr<FusionRig<T>> rig(FusionConfig cfg, std::size_t high, std::size_t low, std::uint64_t seed = 0) {
  auto r = std::make_unique<FusionRig<T>>();
  Rng rng(seed);
  r->fusion = std::make_unique<Fusion<T>>(cfg, high, low, r->params, "fusion", rng);
  return r;
}

template <typename T>
void set_identity(ag::Var<T>& weight) {
  auto& w = weight.mutable_value();
  w.fill(T{0});
  for (std::size_t i = 0; i < std::min(w.dim(0), w.dim(1)); ++i) w.at(i, i, 0, 0) = T{1};
}

}  // namespace

TEST(FuseHigh, ConcatenationFeedsProjection) {
  // fs [512,32,32] + es [256,32,32] -> a 768-channel input to the projection.
  FusionConfig cfg;
  cfg.c_prime = 64;
  auto r = rig<float>(cfg, 768, 64);
  Rng rng(0);
  const auto fs = random_tensor<float>({512, 32, 32}, rng), es = random_tensor<float>({256, 32, 32}, rng);
  const auto fq = random_tensor<float>({512, 32, 32}, rng), eq = random_tensor<float>({256, 32, 32}, rng);
  EXPECT_EQ(r->params.at("fusion.proj_high.weight").shape(), (Shape{64, 768, 1, 1}));
  EXPECT_EQ(r->fusion->fuse_high(fs, es, fq, eq).shape(), (Shape{2, 64, 32, 32}));
}

TEST(FuseHigh, IdentityProjectionReturnsConcatenation) {
  FusionConfig cfg;
  cfg.c_prime = 10;
  auto r = rig<double>(cfg, 10, 4);
  set_identity(r->params.at("fusion.proj_high.weight"));
  Rng rng(1);
  const auto fs = random_tensor<double>({6, 4, 4}, rng), es = random_tensor<double>({4, 4, 4}, rng);
  const auto fq = random_tensor<double>({6, 4, 4}, rng), eq = random_tensor<double>({4, 4, 4}, rng);
  const auto out = r->fusion->fuse_high(fs, es, fq, eq);
  for (std::size_t c = 0; c < 10; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        EXPECT_EQ(out.at(0, c, y, x), c < 6 ? fs.at(c, y, x) : es.at(c - 6, y, x));
        EXPECT_EQ(out.at(1, c, y, x), c < 6 ? fq.at(c, y, x) : eq.at(c - 6, y, x));
      }
}

TEST(FuseHigh, SpatialMismatchRejected) {
  FusionConfig cfg;
  auto r = rig<float>(cfg, 768, 64);
  Rng rng(0);
  const auto fs = random_tensor<float>({512, 32, 32}, rng), es = random_tensor<float>({256, 16, 16}, rng);
  EXPECT_TRUE(throws_code([&] { r->fusion->fuse_high(fs, es, fs, es); }, ErrorCode::ShapeMismatch));
}

TEST(FuseLowRaw, ShapeAndConfigCases) {
  Rng rng(2);
  FusionConfig cfg;
  cfg.c_prime = 16;
  auto r = rig<float>(cfg, 40, 12);
  const auto fs = random_tensor<float>({8, 128, 128}, rng), es = random_tensor<float>({4, 128, 128}, rng);
  EXPECT_EQ(r->fusion->fuse_low_raw(fs, es, fs, es).shape(), (Shape{2, 16, 128, 128}));

  // Without the FEE the projection consumes the SFE channels alone.
  cfg.use_fee = false;
  auto s = rig<double>(cfg, 32, 8);
  const auto a = random_tensor<double>({8, 16, 16}, rng), b = random_tensor<double>({8, 16, 16}, rng);
  const auto out = s->fusion->fuse_low_raw(a, Tensor<double>(), b, Tensor<double>());
  const auto ref = s->fusion->project_low(ag::constant(stack<double>({a, b}))).value();
  EXPECT_EQ(out, ref);
}

TEST(FuseLowRaw, ZeroInputsZeroBiasGiveZero) {
  FusionConfig cfg;
  cfg.c_prime = 8;
  auto r = rig<double>(cfg, 12, 12);
  const Tensor<double> z({6, 8, 8}, 0.0);
  const auto vs = r->fusion->fuse_low_raw(z, z, z, z);
  for (double v : vs.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fam, Shapes) {
  FusionConfig cfg;
  cfg.c_prime = 256;
  auto r = rig<float>(cfg, 8, 8);
  Rng rng(3);
  const auto x = random_tensor<float>({2, 256, 128, 128}, rng);
  EXPECT_EQ(r->params.at("fusion.fam.stage1.conv1.weight").shape(), (Shape{128, 256, 1, 1}));
  EXPECT_EQ(r->params.at("fusion.fam.stage2.conv1.weight").shape(), (Shape{256, 128, 1, 1}));
  EXPECT_EQ(r->fusion->fam(x).shape(), (Shape{2, 256, 32, 32}));
  EXPECT_TRUE(throws_code([&] { r->fusion->fam(random_tensor<float>({2, 256, 10, 12}, rng)); }, ErrorCode::IndivisibleInput));
}

TEST(Fam, CenterTapConstantsMatchClosedForm) {
  // With only the centre tap of each 3x3 kernel set, zero padding never
  // enters and a constant input stays constant through both stages.
  const std::size_t c = 6;
  FusionConfig cfg;
  cfg.c_prime = c;
  auto r = rig<double>(cfg, 4, 4);
  const double wc1 = 0.3, b31 = -0.2, w11 = 0.5, b11 = 0.1;
  const double wc2 = -0.4, b32 = 0.25, w12 = 0.7, b12 = -0.05;
  auto setup = [&](const std::string& stage, double wc, double b3, double w1, double b1) {
    auto& k3 = r->params.at("fusion.fam." + stage + ".conv3.weight").mutable_value();
    k3.fill(0.0);
    for (std::size_t o = 0; o < k3.dim(0); ++o)
      for (std::size_t i = 0; i < k3.dim(1); ++i) k3.at(o, i, 1, 1) = wc;
    r->params.at("fusion.fam." + stage + ".conv3.bias").mutable_value().fill(b3);
    r->params.at("fusion.fam." + stage + ".conv1.weight").mutable_value().fill(w1);
    r->params.at("fusion.fam." + stage + ".conv1.bias").mutable_value().fill(b1);
  };
  setup("stage1", wc1, b31, w11, b11);
  setup("stage2", wc2, b32, w12, b12);
  const double x = 0.8;
  const double s1 = static_cast<double>(c) * w11 * ag::gelu_value(static_cast<double>(c) * wc1 * x + b31) + b11;
  const double half = static_cast<double>(c / 2);
  const double expected = half * w12 * ag::gelu_value(half * wc2 * s1 + b32) + b12;
  const auto out = r->fusion->fam(Tensor<double>({2, c, 16, 16}, x));
  EXPECT_EQ(out.shape(), (Shape{2, c, 4, 4}));
  for (double v : out.values()) EXPECT_NEAR(v, expected, 1e-14);
}

TEST(Fam, GradientMatchesFiniteDifferences) {
  FusionConfig cfg;
  cfg.c_prime = 4;
  auto r = rig<double>(cfg, 4, 4, 6);
  Rng rng(4);
  const auto x = random_tensor<double>({2, 4, 8, 8}, rng);
  const Tensor<double> mean_weights({2, 4, 2, 2}, 1.0 / 32.0);
  auto f = [&](const ag::Var<double>& in) { return project(r->fusion->fam(in), mean_weights); };
  EXPECT_LT(check_input_gradient(x, f).max_rel_error, 1e-3);
}

TEST(Fam, TranslationCovariantOnInterior) {
  FusionConfig cfg;
  cfg.c_prime = 4;
  auto r = rig<double>(cfg, 4, 4, 8);
  Rng rng(5);
  const std::size_t n = 32;
  const auto big = random_tensor<double>({1, 4, n + 4, n + 4}, rng);
  Tensor<double> a({1, 4, n, n}), b({1, 4, n, n});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        a.at(0, c, y, x) = big.at(0, c, y, x);
        b.at(0, c, y, x) = big.at(0, c, y + 4, x + 4);
      }
  const auto fa = r->fusion->fam(a), fb = r->fusion->fam(b);
  // A 4-pixel input shift is one output pixel; stay two pixels clear of the
  // border so zero padding never reaches the compared region.
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t y = 2; y + 3 < n / 4; ++y)
      for (std::size_t x = 2; x + 3 < n / 4; ++x) EXPECT_NEAR(fb.at(0, c, y, x), fa.at(0, c, y + 1, x + 1), 1e-12);
}

TEST(CombineAndSplit, ZeroLowReturnsSlicedHigh) {
  Rng rng(6);
  const auto high = random_tensor<double>({2, 4, 3, 3}, rng);
  const auto p = Fusion<double>::combine_and_split(high, Tensor<double>({2, 4, 3, 3}, 0.0));
  EXPECT_EQ(p.f_support, take(high, 0));
  EXPECT_EQ(p.f_query, take(high, 1));
  const auto q = Fusion<double>::combine_and_split(high, std::nullopt);
  EXPECT_EQ(q.f_support, take(high, 0));
}

TEST(CombineAndSplit, SumsThenSlices) {
  Rng rng(7);
  const auto A = random_tensor<double>({4, 3, 3}, rng), B = random_tensor<double>({4, 3, 3}, rng);
  const auto C = random_tensor<double>({2, 4, 3, 3}, rng);
  const auto p = Fusion<double>::combine_and_split(stack<double>({A, B}), C);
  for (std::size_t i = 0; i < A.size(); ++i) {
    EXPECT_EQ(p.f_support[i], A[i] + C[i]);
    EXPECT_EQ(p.f_query[i], B[i] + C[A.size() + i]);
  }
  EXPECT_TRUE(throws_code([&] { Fusion<double>::combine_and_split(random_tensor<double>({3, 4, 3, 3}, rng), C); },
                          ErrorCode::ShapeMismatch));
}

TEST(FusionForward, EveryConfigurationYieldsCPrimeAtStrideEight) {
  Rng rng(8);
  for (bool fee : {false, true})
    for (bool fam : {false, true})
      for (bool swap : {false, true}) {
        FusionConfig cfg;
        cfg.c_prime = 6;
        cfg.use_fee = fee;
        cfg.use_fam = fam;
        cfg.swap_roles = swap;
        const std::size_t hc = fee ? 40 : 32, lc = fee ? 12 : 8;
        auto r = rig<double>(cfg, hc, lc);
        for (const std::size_t hp : {2, 3, 5}) {
          const auto high = random_tensor<double>({2, hc, hp, hp + 1}, rng);
          const auto low = random_tensor<double>({2, lc, 4 * hp, 4 * (hp + 1)}, rng);
          const auto out = r->fusion->forward(ag::constant(high), ag::constant(low));
          EXPECT_EQ(out.shape(), (Shape{2, 6, hp, hp + 1})) << cfg.describe() << " h'=" << hp;
          EXPECT_TRUE(out.value().all_finite());
        }
      }
}

TEST(FusionForward, EveryParameterReceivesGradient) {
  for (bool swap : {false, true}) {
    FusionConfig cfg;
    cfg.c_prime = 6;
    cfg.swap_roles = swap;
    auto r = rig<double>(cfg, 20, 10, 3);
    Rng rng(9);
    const auto high = random_tensor<double>({2, 20, 4, 4}, rng);
    const auto low = random_tensor<double>({2, 10, 16, 16}, rng);
    const auto rr = random_tensor<double>({2, 6, 4, 4}, rng);
    ag::backward(project(r->fusion->forward(ag::constant(high), ag::constant(low)), rr));
    for (const auto& [name, v] : r->params.items()) {
      bool nonzero = false;
      const auto gs = v.grad();
      for (double g : gs.values()) nonzero = nonzero || g != 0.0;
      EXPECT_TRUE(nonzero) << name << (swap ? " (swapped)" : "");
    }
  }
}

TEST(FusionForward, BaselineReducesToProjectedHighFeatures) {
  FusionConfig cfg;
  cfg.c_prime = 6;
  cfg.use_fee = false;
  cfg.use_fam = false;
  auto r = rig<double>(cfg, 16, 8, 4);
  r->params.at("fusion.proj_low.weight").mutable_value().fill(0.0);
  Rng rng(10);
  const auto high = random_tensor<double>({2, 16, 4, 4}, rng);
  const auto low = random_tensor<double>({2, 8, 16, 16}, rng);
  const auto out = r->fusion->forward(ag::constant(high), ag::constant(low)).value();
  const auto& w = r->params.at("fusion.proj_high.weight").value();
  const auto& b = r->params.at("fusion.proj_high.bias").value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 6; ++o)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
          double acc = b[o];
          for (std::size_t i = 0; i < 16; ++i) acc += w.at(o, i, 0, 0) * high.at(n, i, y, x);
          EXPECT_NEAR(out.at(n, o, y, x), acc, 1e-12);
        }
}

TEST(FusionForward, WithoutFamAddsAveragePooledRawLowFeatures) {
  FusionConfig cfg;
  cfg.c_prime = 4;
  cfg.use_fam = false;
  auto r = rig<double>(cfg, 8, 8, 5);
  Rng rng(11);
  const auto high = random_tensor<double>({2, 8, 2, 2}, rng);
  const auto low = random_tensor<double>({2, 8, 8, 8}, rng);
  const auto out = r->fusion->forward(ag::constant(high), ag::constant(low)).value();
  const auto fh = r->fusion->project_high(ag::constant(high)).value();
  const auto fl = r->fusion->project_low(ag::constant(low)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) {
          double pooled = 0;
          for (std::size_t dy = 0; dy < 4; ++dy)
            for (std::size_t dx = 0; dx < 4; ++dx) pooled += fl.at(n, c, 4 * y + dy, 4 * x + dx);
          EXPECT_NEAR(out.at(n, c, y, x), fh.at(n, c, y, x) + pooled / 16.0, 1e-12);
        }
}

TEST(FusionConfig, OddCPrimeRejected) {
  FusionConfig cfg;
  cfg.c_prime = 7;
  EXPECT_TRUE(throws_code([&] { cfg.validate(); }, ErrorCode::InvalidArgument));
}
