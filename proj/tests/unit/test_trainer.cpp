#include <fstream>
#include <limits>

#include "helpers.hpp"

using namespace fssuw;
using fssuw::testing::all_classes;
using fssuw::testing::TempDir;
using fssuw::testing::throws_code;
using fssuw::testing::tiny_config;
using fssuw::testing::tiny_corpus;

namespace {

struct TrainRig {
  DatasetIndex index = tiny_corpus(3, 4);
  TrainConfig cfg = tiny_config();
  std::vector<EpisodeSpec> episodes;

  TrainRig() {
    cfg.epochs = 2;
    cfg.seed = 3;
    episodes = sample_episodes(all_classes(index), index, 4, 17, 1, "t");
  }
};

template <typename T>
bool same_parameters(const FssuwNet<T>& a, const FssuwNet<T>& b) {
  const auto& pa = a.params().items();
  const auto& pb = b.params().items();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].first != pb[i].first || !(pa[i].second.value() == pb[i].second.value())) return false;
  return true;
}

TrainOptions writing_to(const fs::path& dir) {
  TrainOptions o;
  o.out_dir = dir;
  return o;
}

}  // namespace

TEST(LrSchedule, StepsDownEveryDecayPeriod) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(cfg, 0), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 9999), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 10000), 1e-4);
  EXPECT_NEAR(lr_at(cfg, 25000), 1e-5, 1e-20);
}

TEST(Sgd, MomentumAndWeightDecayOnAZeroGradient) {
  ParamSet<double> params;
  params.add("b", Tensor<double>({1}, 2.0));
  Sgd<double> opt(0.9, 0.5);
  opt.step(params, 0.1);
  EXPECT_DOUBLE_EQ(params.at("b").value()[0], 1.9);
  opt.step(params, 0.1);
  EXPECT_DOUBLE_EQ(params.at("b").value()[0], 1.9 - 0.1 * (0.9 * 1.0 + 0.5 * 1.9));
}

TEST(Sgd, PlainGradientStep) {
  ParamSet<double> params;
  auto w = params.add("w", Tensor<double>({2}, std::vector<double>{1.0, -1.0}));
  w.grad_buffer()[0] = 4.0;
  w.grad_buffer()[1] = -2.0;
  Sgd<double> opt(0.0, 0.0);
  opt.step(params, 0.25);
  EXPECT_EQ(params.at("w").value()[0], 0.0);
  EXPECT_EQ(params.at("w").value()[1], -0.5);
}

TEST(TrainingLog, FormatRoundTrip) {
  TempDir dir;
  const LogRow r{12, 0.1, 0.2, 1.0 / 3.0, 0.6333, 1e-3};
  {
    std::ofstream os(dir / "log.csv");
    os << kLogHeader << '\n' << format_log_row(r) << '\n';
  }
  const auto rows = read_training_log(dir / "log.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], r);
}

TEST(Train, IdenticalSeedsGiveIdenticalWeightsAndLogs) {
  TrainRig run;
  TempDir a, b;
  FssuwNet<float> ma(run.cfg.model(), run.cfg.seed), mb(run.cfg.model(), run.cfg.seed);
  const auto ra = train(ma, run.cfg, run.episodes, run.index, writing_to(a.path()));
  const auto rb = train(mb, run.cfg, run.episodes, run.index, writing_to(b.path()));
  EXPECT_EQ(ra.iterations, 8u);
  EXPECT_EQ(ra.rows, rb.rows);
  EXPECT_TRUE(same_parameters(ma, mb));
  EXPECT_EQ(read_training_log(a / "train_log.csv"), read_training_log(b / "train_log.csv"));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  TrainRig run;
  run.cfg.checkpoint_every = 3;
  TempDir full_dir, part_dir;
  FssuwNet<float> full(run.cfg.model(), run.cfg.seed);
  train(full, run.cfg, run.episodes, run.index, writing_to(full_dir.path()));

  FssuwNet<float> first(run.cfg.model(), run.cfg.seed);
  TrainOptions stop = writing_to(part_dir.path());
  stop.stop_after = 3;
  const auto partial = train(first, run.cfg, run.episodes, run.index, stop);
  ASSERT_EQ(partial.iterations, 3u);
  ASSERT_TRUE(fs::exists(partial.last_checkpoint));

  FssuwNet<float> resumed(run.cfg.model(), run.cfg.seed + 100);
  TrainOptions go = writing_to(part_dir.path());
  go.resume_from = partial.last_checkpoint;
  const auto rest = train(resumed, run.cfg, run.episodes, run.index, go);
  EXPECT_EQ(rest.iterations, 5u);
  EXPECT_TRUE(same_parameters(full, resumed));
  EXPECT_EQ(read_training_log(full_dir / "train_log.csv"), read_training_log(part_dir / "train_log.csv"));
}

TEST(Train, ChangedConfigurationRefusesToResume) {
  TrainRig run;
  TempDir dir;
  FssuwNet<float> m(run.cfg.model(), run.cfg.seed);
  TrainOptions stop = writing_to(dir.path());
  stop.stop_after = 2;
  const auto partial = train(m, run.cfg, run.episodes, run.index, stop);
  auto other = run.cfg;
  other.lr0 = 0.01;
  FssuwNet<float> m2(other.model(), other.seed);
  TrainOptions go;
  go.resume_from = partial.last_checkpoint;
  EXPECT_TRUE(throws_code([&] { train(m2, other, run.episodes, run.index, go); }, ErrorCode::ConfigMismatch));
  auto fewer = run.episodes;
  fewer.pop_back();
  EXPECT_TRUE(throws_code([&] { train(m2, run.cfg, fewer, run.index, go); }, ErrorCode::ConfigMismatch));
  auto wider = run.cfg;
  wider.c_prime = 16;
  FssuwNet<float> m3(wider.model(), wider.seed);
  EXPECT_TRUE(throws_code([&] { train(m3, wider, run.episodes, run.index, go); }, ErrorCode::ConfigMismatch));
}

TEST(Train, EmptyEpisodeList) {
  TrainRig run;
  FssuwNet<float> m(run.cfg.model());
  EXPECT_TRUE(throws_code([&] { train(m, run.cfg, {}, run.index); }, ErrorCode::EmptyEpisodeList));
}

TEST(Train, NonFiniteLossStopsWithDump) {
  TrainRig run;
  TempDir dir;
  FssuwNet<float> m(run.cfg.model(), run.cfg.seed);
  m.params().items().front().second.mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_TRUE(throws_code([&] { train(m, run.cfg, run.episodes, run.index, writing_to(dir.path())); }, ErrorCode::NonFiniteLoss));
  ASSERT_TRUE(fs::exists(dir / "nonfinite_dump.json"));
  std::ifstream is(dir / "nonfinite_dump.json");
  const auto j = nlohmann::json::parse(is);
  EXPECT_EQ(j.at("iter").get<std::size_t>(), 0u);
  EXPECT_EQ(j.at("episode").at("query").get<std::string>(), run.episodes[0].query_id);
}

TEST(Train, LossDecreasesOnAFixedEpisode) {
  TrainRig run;
  run.cfg.epochs = 30;
  run.cfg.lr0 = 0.01;
  const std::vector<EpisodeSpec> one(1, run.episodes[0]);
  FssuwNet<float> m(run.cfg.model(), run.cfg.seed);
  const auto r = train(m, run.cfg, one, run.index);
  ASSERT_EQ(r.rows.size(), 30u);
  EXPECT_LT(r.rows.back().total, r.rows.front().total);
}

TEST(GradientAudit, FullModelWithinTolerance) {
  TrainRig run;
  FssuwNet<double> m(run.cfg.model(), 5);
  const auto ep = materialize_episode<double>(run.episodes[0], run.index, run.cfg.preprocess(), 1);
  AuditConfig ac;
  ac.fraction = 0.002;
  ac.min_samples = 40;
  ac.seed = 1;
  const auto a = gradient_audit(m, ep, ac);
  EXPECT_GE(a.samples.size(), 30u);
  EXPECT_LT(a.skipped_nonsmooth, a.samples.size());
  EXPECT_LT(a.max_rel_error, 1e-3);
  const auto b = gradient_audit(m, ep, ac);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].name, b.samples[i].name);
    EXPECT_EQ(a.samples[i].analytic, b.samples[i].analytic);
  }
}

TEST(GradientAudit, ExtrapolatedDifferencesAgreeWithPlainOnes) {
  TrainRig run;
  FssuwNet<double> m(run.cfg.model(), 5);
  const auto ep = materialize_episode<double>(run.episodes[0], run.index, run.cfg.preprocess(), 1);
  AuditConfig ac;
  ac.prefixes = {"fusion."};
  ac.fraction = 0.05;
  ac.seed = 2;
  const auto plain = gradient_audit(m, ep, ac);
  ac.richardson = true;
  const auto extrapolated = gradient_audit(m, ep, ac);
  ASSERT_FALSE(extrapolated.samples.empty());
  ASSERT_LE(extrapolated.samples.size(), plain.samples.size());
  EXPECT_LT(extrapolated.max_rel_error, 1e-3);
  for (const auto& s : extrapolated.samples) EXPECT_NEAR(s.numeric, s.analytic, 1e-3 * std::max(std::abs(s.analytic), 1e-5));
}

TEST(GradientAudit, RejectsEmptySelection) {
  TrainRig run;
  FssuwNet<double> m(run.cfg.model(), 5);
  const auto ep = materialize_episode<double>(run.episodes[0], run.index, run.cfg.preprocess(), 1);
  AuditConfig ac;
  ac.prefixes = {"nothing."};
  EXPECT_TRUE(throws_code([&] { gradient_audit(m, ep, ac); }, ErrorCode::InvalidArgument));
}

TEST(GradientAudit, RelativeErrorFloor) {
  EXPECT_NEAR(relative_error(1.0, 1.001, 1e-6), 0.001 / 1.001, 1e-15);
  EXPECT_NEAR(relative_error(1e-9, 0.0, 1e-6), 1e-3, 1e-15);
}

TEST(TrainConfig, Validation) {
  auto cfg = tiny_config();
  cfg.resolution = 60;
  EXPECT_TRUE(throws_code([&] { cfg.validate(); }, ErrorCode::IndivisibleInput));
  cfg = tiny_config();
  cfg.k_shot = 2;
  EXPECT_TRUE(throws_code([&] { cfg.validate(); }, ErrorCode::InvalidArgument));
  cfg = tiny_config();
  cfg.batch_size = 4;
  EXPECT_TRUE(throws_code([&] { cfg.validate(); }, ErrorCode::InvalidArgument));
}
