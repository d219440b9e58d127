#pragma once

// Command-line front end. Requires CLI11.hpp on the include path.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "evaluation.hpp"

#ifndef FSSUW_REVISION
#define FSSUW_REVISION "unknown"
#endif

namespace fssuw::cli {

inline bool deterministic_forced() {
  const char* v = std::getenv("FSSUW_DETERMINISTIC");
  return v && std::string(v) == "1";
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Everything needed to re-run the command that produced an artifact directory.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config;  // key = value snapshot
  std::string corpus_hash;
  std::uint64_t seed = 0;
  std::string revision = FSSUW_REVISION;
  bool deterministic = true;
  std::string started;
  std::string finished;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["corpus_hash"] = corpus_hash;
    j["seed"] = seed;
    j["revision"] = revision;
    j["deterministic"] = deterministic;
    j["started"] = started;
    j["finished"] = finished;
    return j;
  }

  void write(const fs::path& dir) const { write_file(dir / "manifest.json"); }

  void write_file(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream(path) << to_json().dump(2) << '\n';
  }
};

// ---------------------------------------------------------------------------
// Corpus access shared by the subcommands

inline nlohmann::ordered_json index_to_json(const DatasetIndex& index, double min_fraction) {
  nlohmann::ordered_json j;
  j["min_fraction"] = min_fraction;
  j["corpus_hash"] = hex64(index.corpus_hash());
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const auto& e : index.classes().entries())
    classes.push_back({{"id", e.id}, {"name", e.name}, {"rgb", {e.color[0], e.color[1], e.color[2]}}});
  j["classes"] = classes;
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (const auto& s : index.samples()) {
    nlohmann::ordered_json o;
    o["id"] = s.source_id;
    o["image"] = fs::absolute(s.image_path).string();
    o["mask"] = fs::absolute(s.mask_path).string();
    o["height"] = s.height;
    o["width"] = s.width;
    nlohmann::ordered_json px = nlohmann::ordered_json::object();
    for (const auto& [c, n] : s.class_pixels) px[std::to_string(c)] = n;
    o["class_pixels"] = px;
    o["classes"] = std::vector<int>(s.classes_present.begin(), s.classes_present.end());
    o["snap_colors"] = s.snap_colors;
    samples.push_back(o);
  }
  j["samples"] = samples;
  j["skipped"] = index.skipped();
  return j;
}

inline DatasetIndex index_from_json(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    std::vector<ClassEntry> entries;
    for (const auto& c : j.at("classes")) {
      const auto rgb = c.at("rgb").get<std::vector<int>>();
      entries.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(),
                         {static_cast<std::uint8_t>(rgb.at(0)), static_cast<std::uint8_t>(rgb.at(1)),
                          static_cast<std::uint8_t>(rgb.at(2))}});
    }
    DatasetIndex index{ClassMap(std::move(entries))};
    for (const auto& o : j.at("samples")) {
      ImageSample s;
      s.source_id = o.at("id").get<std::string>();
      s.image_path = o.at("image").get<std::string>();
      s.mask_path = o.at("mask").get<std::string>();
      s.height = o.at("height").get<std::size_t>();
      s.width = o.at("width").get<std::size_t>();
      for (const auto& [k, v] : o.at("class_pixels").items()) s.class_pixels[std::stoi(k)] = v.get<std::size_t>();
      for (int c : o.at("classes")) s.classes_present.insert(c);
      s.snap_colors = o.value("snap_colors", false);
      index.add(std::move(s));
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
}

struct CorpusOptions {
  double min_fraction = 0.10;
  std::string class_map;
  bool snap_colors = false;
};

/// A directory written by build-suim-fss (has index.json) or a raw corpus
/// root with images/ and masks/. Raw roots use root/classes.csv when present,
/// otherwise the SUIM class map, and are filtered at min_fraction.
inline DatasetIndex open_corpus(const fs::path& data, const CorpusOptions& o) {
  if (fs::exists(data / "index.json")) return index_from_json(data / "index.json");
  ClassMap classes = !o.class_map.empty()              ? ClassMap::from_csv(o.class_map)
                     : fs::exists(data / "classes.csv") ? ClassMap::from_csv(data / "classes.csv")
                                                        : ClassMap::suim();
  LoadOptions lo;
  lo.snap_colors = o.snap_colors;
  return filter_small_targets_all(load_dataset(data, classes, lo), o.min_fraction);
}

inline std::vector<FoldConfig> folds_for(const DatasetIndex& index, const std::string& scheme, const std::string& grouping) {
  const FoldScheme s = parse_fold_scheme(scheme);
  if (!grouping.empty()) return build_folds(index, s, read_grouping_file(grouping));
  return build_folds(index, s);
}

inline std::string joined(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " ") + x;
  return s;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Context {
  std::vector<std::string> argv;
  std::ostream& out;
  std::ostream& err;
  bool fast = false;

  bool deterministic() const { return !fast || deterministic_forced(); }
  RunManifest manifest(const std::string& command) const {
    RunManifest m;
    m.command = command;
    m.argv = argv;
    m.deterministic = deterministic();
    m.started = utc_now();
    return m;
  }
};

struct BuildArgs {
  std::string root, out, class_map;
  double min_fraction = 0.10;
  bool snap_colors = false;
};

inline int run_build(const Context& ctx, const BuildArgs& a) {
  auto m = ctx.manifest("build-suim-fss");
  const ClassMap classes = a.class_map.empty() ? ClassMap::suim() : ClassMap::from_csv(a.class_map);
  LoadOptions lo;
  lo.snap_colors = a.snap_colors;
  const DatasetIndex raw = load_dataset(a.root, classes, lo);
  const DatasetIndex index = filter_small_targets_all(raw, a.min_fraction);
  const auto folds = build_folds(index, FoldScheme::SUIM2);

  const fs::path out = a.out;
  fs::create_directories(out);
  std::ofstream(out / "index.json") << index_to_json(index, a.min_fraction).dump(2) << '\n';
  index.classes().write_csv(out / "classes.csv");
  nlohmann::ordered_json fj = nlohmann::ordered_json::array();
  for (const auto& f : folds)
    fj.push_back({{"fold_id", f.fold_id},
                  {"scheme", to_string(f.scheme)},
                  {"train_classes", std::vector<int>(f.train_classes.begin(), f.train_classes.end())},
                  {"test_classes", std::vector<int>(f.test_classes.begin(), f.test_classes.end())}});
  std::ofstream(out / "folds.json") << fj.dump(2) << '\n';

  const auto counts = index.instance_counts();
  const auto& ref = suim_fss_reference_counts();
  std::ofstream table(out / "counts.md");
  table << "| Split | Class | Instances | Published |\n|---|---|---:|---:|\n";
  for (std::size_t f = 0; f < 2; ++f)
    for (const auto& name : suim_fss_splits()[f]) {
      const auto& e = index.classes().by_name(name);
      table << "| " << f << " | " << name << " | " << counts.at(e.id) << " | " << ref.at(name) << " |\n";
    }
  for (const auto& s : raw.skipped()) ctx.err << "skipped: " << s << '\n';
  ctx.out << "indexed " << index.size() << " samples, corpus hash " << hex64(index.corpus_hash()) << '\n';

  m.config = "min_fraction = " + std::to_string(a.min_fraction) + "\n";
  m.corpus_hash = hex64(index.corpus_hash());
  m.finished = utc_now();
  m.write(out);
  return 0;
}

struct SampleArgs {
  std::string data, out, scheme = "suim2", grouping, split = "test";
  int fold = 0;
  std::size_t n = 1000, k = 1;
  std::uint64_t seed = 0;
  CorpusOptions corpus;
};

inline int run_sample(const Context& ctx, const SampleArgs& a) {
  auto m = ctx.manifest("sample-episodes");
  const DatasetIndex index = open_corpus(a.data, a.corpus);
  const auto folds = folds_for(index, a.scheme, a.grouping);
  require(a.fold >= 0 && static_cast<std::size_t>(a.fold) < folds.size(), ErrorCode::InvalidArgument,
          "fold " + std::to_string(a.fold) + " out of range (have " + std::to_string(folds.size()) + ")");
  const auto& fold = folds[static_cast<std::size_t>(a.fold)];
  std::vector<EpisodeSpec> specs;
  if (a.split == "test") {
    specs = freeze_test_pairs(fold, index, a.n, a.seed, a.out, a.k);
  } else {
    specs = sample_training_pairs(fold, index, a.n, a.seed, a.k);
    write_episode_list(a.out, specs);
  }
  ctx.out << "wrote " << specs.size() << " episodes to " << a.out << '\n';
  m.seed = a.seed;
  m.corpus_hash = hex64(index.corpus_hash());
  m.config = "fold = " + std::to_string(a.fold) + "\nsplit = " + a.split + "\nn = " + std::to_string(a.n) +
             "\nk = " + std::to_string(a.k) + "\nscheme = " + a.scheme + "\n";
  m.finished = utc_now();
  m.write_file(fs::path(a.out).replace_extension(".manifest.json"));
  return 0;
}

struct TrainArgs {
  std::string config, episodes, data, out, resume;
  std::vector<std::string> overrides;
  CorpusOptions corpus;
};

template <typename T>
int run_train_typed(const Context& ctx, const TrainArgs& a, const TrainConfig& cfg) {
  auto m = ctx.manifest("train");
  const DatasetIndex index = open_corpus(a.data, a.corpus);
  const auto episodes = read_episode_list(a.episodes);
  FssuwNet<T> model(cfg.model(), cfg.seed);
  const Metadata meta{{"config", to_config_text(cfg)},
                      {"data", fs::absolute(a.data).string()},
                      {"corpus_hash", hex64(index.corpus_hash())},
                      {"precision", sizeof(T) == 8 ? "f64" : "f32"}};
  fs::create_directories(a.out);
  std::ofstream(fs::path(a.out) / "config.toml") << to_config_text(cfg);
  TrainOptions opts;
  opts.out_dir = a.out;
  opts.resume_from = a.resume;
  opts.metadata = meta;
  const auto result = train(model, cfg, episodes, index, opts);
  model.save(fs::path(a.out) / "model.fssw", meta);
  ctx.out << "trained " << result.iterations << " iterations";
  if (!result.rows.empty()) ctx.out << ", final total loss " << result.rows.back().total;
  ctx.out << '\n';
  if (result.skipped) ctx.err << "skipped " << result.skipped << " iterations whose episode vanished at this resolution\n";
  m.config = to_config_text(cfg);
  m.seed = cfg.seed;
  m.corpus_hash = hex64(index.corpus_hash());
  m.finished = utc_now();
  m.write(a.out);
  return 0;
}

inline int run_train(const Context& ctx, const TrainArgs& a) {
  const TrainConfig cfg = resolve_config(a.config, a.overrides);
  return ctx.deterministic() ? run_train_typed<double>(ctx, a, cfg) : run_train_typed<float>(ctx, a, cfg);
}

/// Model weights plus the configuration and corpus they were trained with.
struct LoadedRun {
  TrainConfig cfg;
  Metadata meta;
  fs::path data;
};

inline LoadedRun inspect_checkpoint(const fs::path& ckpt) {
  require(fs::exists(ckpt), ErrorCode::IoError, "missing checkpoint " + ckpt.string());
  const WeightFile wf = read_weight_file(ckpt);
  LoadedRun r;
  r.meta = wf.metadata;
  if (auto it = r.meta.find("config"); it != r.meta.end()) {
    apply_config(r.cfg, parse_config_text(it->second, ckpt.string()));
  } else if (fs::exists(ckpt.parent_path().parent_path() / "config.toml")) {
    apply_config(r.cfg, read_config_file(ckpt.parent_path().parent_path() / "config.toml"));
  }
  if (auto it = r.meta.find("data"); it != r.meta.end()) r.data = it->second;
  return r;
}

struct EvalArgs {
  std::string checkpoint, episodes, out, data, save_masks;
  int fold_id = 0;
  bool per_episode_mean = false;
  std::size_t threads = 1;
  CorpusOptions corpus;
};

template <typename T>
int run_eval_typed(const Context& ctx, const EvalArgs& a, const LoadedRun& run) {
  auto m = ctx.manifest("eval");
  const fs::path data = a.data.empty() ? run.data : fs::path(a.data);
  require(!data.empty(), ErrorCode::InvalidArgument, "no --data given and the checkpoint does not record one");
  const DatasetIndex index = open_corpus(data, a.corpus);
  const auto episodes = read_episode_list(a.episodes);
  FssuwNet<T> model(run.cfg.model(), run.cfg.seed);
  model.load(a.checkpoint);
  EvalOptions eo;
  eo.per_episode_mean = a.per_episode_mean;
  eo.threads = ctx.deterministic() ? 1 : a.threads;
  if (!a.save_masks.empty()) eo.save_masks_dir = a.save_masks;
  const MetricsReport rep = evaluate_fold(model, episodes, index, run.cfg.preprocess(), a.fold_id, eo);
  auto j = to_json(rep, &index.classes());
  j["checkpoint"] = fs::absolute(a.checkpoint).string();
  j["episodes_file"] = fs::absolute(a.episodes).string();
  j["accumulation"] = a.per_episode_mean ? "per-episode-mean" : "pixel-sum";
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << j.dump(2) << '\n';
  const std::vector<TableRow> rows{make_row("fold " + std::to_string(a.fold_id), {rep.fold_miou})};
  fs::path md = out, csv = out;
  std::ofstream(md.replace_extension(".md")) << render_markdown(rows);
  std::ofstream(csv.replace_extension(".csv")) << render_csv(rows);
  ctx.out << "fold " << a.fold_id << " mIoU " << percent(rep.fold_miou) << " over " << rep.episodes.size()
          << " episodes\n";
  m.config = to_config_text(run.cfg);
  m.seed = run.cfg.seed;
  m.corpus_hash = hex64(index.corpus_hash());
  m.finished = utc_now();
  fs::path mpath = out;
  m.write_file(mpath.replace_extension(".manifest.json"));
  return 0;
}

inline int run_eval(const Context& ctx, const EvalArgs& a) {
  const LoadedRun run = inspect_checkpoint(a.checkpoint);
  return ctx.deterministic() ? run_eval_typed<double>(ctx, a, run) : run_eval_typed<float>(ctx, a, run);
}

struct ProbeArgs {
  std::string data, out, episodes, checkpoint;
  std::size_t n = 20, resolution = 0;
  std::uint64_t seed = 0;
  CorpusOptions corpus;
};

/// Prior masks of query images against their supports, from the fused
/// features of a trained (or, without --checkpoint, freshly initialised)
/// network. Writes one heatmap per episode plus fragility.csv.
inline int run_probe(const Context& ctx, const ProbeArgs& a) {
  auto m = ctx.manifest("probe-prior");
  const DatasetIndex index = open_corpus(a.data, a.corpus);
  TrainConfig cfg;
  if (!a.checkpoint.empty()) cfg = inspect_checkpoint(a.checkpoint).cfg;
  if (a.resolution) cfg.resolution = a.resolution;
  if (a.checkpoint.empty() && !a.resolution) cfg.resolution = 64;
  cfg.k_shot = 1;
  cfg.validate();
  FssuwNet<double> model(cfg.model(), cfg.seed);
  if (!a.checkpoint.empty()) model.load(a.checkpoint);

  std::vector<EpisodeSpec> specs;
  if (!a.episodes.empty()) {
    specs = read_episode_list(a.episodes);
  } else {
    std::set<int> usable;
    for (int c : index.classes().ids())
      if (index.instances(c).size() >= 2) usable.insert(c);
    require(!usable.empty(), ErrorCode::InsufficientClasses, "no class has two instances to pair");
    specs = sample_episodes(usable, index, a.n, a.seed, 1, "probe");
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  std::ofstream csv(out / "fragility.csv");
  csv << "episode,class,support,query,fragility\n";
  std::size_t written = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    EpisodeSpec one = spec;
    one.support_ids.resize(1);
    Episode<double> ep;
    try {
      ep = materialize_episode<double>(one, index, cfg.preprocess(), 1);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyMaskAfterResize) throw;
      ctx.err << "episode " << i << ": " << e.what() << '\n';
      continue;
    }
    const auto f = model.features(FssuwNet<double>::episode_images(ep)).value();
    const auto prior = prior_mask(take(f, 1), take(f, 0), ep.support_masks[0]);
    const Mask gt = mask_to_resolution(ep.query_gt, prior.values.dim(0), prior.values.dim(1));
    std::string score = "nan";
    const std::size_t fg = count_nonzero(gt);
    if (fg > 0 && fg < gt.size()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9f", fragility_score(prior, gt));
      score = buf;
    }
    char name[48];
    std::snprintf(name, sizeof name, "prior_%04zu.png", i);
    io::write_png(out / name, io::heatmap(prior.values, cfg.resolution, cfg.resolution));
    csv << i << ',' << spec.class_id << ',' << one.support_ids[0] << ',' << spec.query_id << ',' << score << '\n';
    ++written;
  }
  ctx.out << "wrote " << written << " prior heatmaps to " << out.string() << '\n';
  m.config = to_config_text(cfg);
  m.seed = a.seed;
  m.corpus_hash = hex64(index.corpus_hash());
  m.finished = utc_now();
  m.write(out);
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out, label = "FSSUWNet (this build)", reference;
  bool plot = false;
};

inline int run_report(const Context& ctx, const ReportArgs& a) {
  auto m = ctx.manifest("report");
  std::vector<std::pair<int, double>> folds;
  for (const auto& p : a.inputs) {
    std::ifstream is(p);
    require(static_cast<bool>(is), ErrorCode::IoError, "cannot open report " + p);
    try {
      const auto j = nlohmann::json::parse(is);
      folds.emplace_back(j.at("fold_id").get<int>(), j.at("fold_miou").get<double>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::CorruptFile, p + ": " + e.what());
    }
  }
  std::sort(folds.begin(), folds.end());
  std::vector<double> v;
  for (const auto& [_, x] : folds) v.push_back(x);
  std::vector<TableRow> rows{make_row(a.label, v)};
  if (!a.reference.empty()) {
    const std::size_t shots = a.reference.back() == '5' ? 5 : 1;
    const std::string dataset = a.reference.substr(0, a.reference.find(':'));
    bool found = false;
    for (const auto& r : reference_rows()) {
      if (r.dataset == dataset && r.shots == shots && r.folds.size() == v.size()) {
        rows.push_back(to_row(r));
        found = true;
      }
    }
    require(found, ErrorCode::InvalidArgument,
            "no published row for " + a.reference + " with " + std::to_string(v.size()) + " folds");
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  const std::string md = render_markdown(rows);
  std::ofstream(out / "table.md") << md;
  std::ofstream(out / "table.csv") << render_csv(rows);
  if (a.plot) {
    std::vector<std::string> labels;
    for (const auto& [f, _] : folds) labels.push_back(fold_header(static_cast<std::size_t>(f), folds.size()));
    std::vector<double> values = v;
    values.push_back(rows.front().mean);
    labels.push_back("Mean");
    io::write_png(out / "miou.png", io::bar_chart(values, labels, a.label + " mIoU (%)"));
  }
  ctx.out << md;
  m.config = "inputs = " + joined(a.inputs) + "\n";
  m.finished = utc_now();
  m.write(out);
  return 0;
}

// ---------------------------------------------------------------------------

inline void add_corpus_flags(CLI::App* sub, CorpusOptions& c) {
  sub->add_option("--min-fraction", c.min_fraction, "Drop instances below this foreground share (raw roots only)")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--class-map", c.class_map, "CSV class map (class_id,name,R,G,B) for raw roots");
  sub->add_flag("--snap-colors", c.snap_colors, "Threshold mask channels at 128 before colour lookup");
}

/// Parse argv and run one subcommand. Returns 0 on success, 1 on a domain
/// error and 2 on a usage error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Few-shot underwater segmentation toolkit", "fssuw"};
  app.require_subcommand(0, 1);
  bool fast = false;
  app.add_flag("--fast", fast, "Single precision and parallel evaluation (ignored when FSSUW_DETERMINISTIC=1)");

  BuildArgs build;
  auto* b = app.add_subcommand("build-suim-fss", "Index a SUIM-style corpus, filter small targets, write folds");
  b->add_option("--root", build.root, "Corpus root with images/ and masks/")->required();
  b->add_option("--out", build.out, "Output directory")->required();
  b->add_option("--min-fraction", build.min_fraction, "Minimum foreground share per instance")->check(CLI::Range(0.0, 1.0));
  b->add_option("--class-map", build.class_map, "CSV class map; defaults to the SUIM colours");
  b->add_flag("--snap-colors", build.snap_colors, "Threshold mask channels at 128 before colour lookup");

  SampleArgs sample;
  auto* s = app.add_subcommand("sample-episodes", "Write a reproducible JSON-lines episode list");
  s->add_option("--data", sample.data, "build-suim-fss output or raw corpus root")->required();
  s->add_option("--fold", sample.fold, "Fold index")->required();
  s->add_option("--n", sample.n, "Number of episodes");
  s->add_option("--seed", sample.seed, "Sampler seed");
  s->add_option("--k", sample.k, "Shots per episode (1 or 5)");
  s->add_option("--split", sample.split, "Sample from the fold's test or train classes")
      ->check(CLI::IsMember({"test", "train"}));
  s->add_option("--scheme", sample.scheme, "Fold scheme")->check(CLI::IsMember({"suim2", "uws4", "custom"}));
  s->add_option("--grouping", sample.grouping, "Fold grouping file (one line of class ids per fold)");
  s->add_option("--out", sample.out, "Episode list path")->required();
  add_corpus_flags(s, sample.corpus);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Episodic training with per-epoch checkpoints");
  t->add_option("--config", tr.config, "Key = value configuration file");
  t->add_option("--episodes", tr.episodes, "Training episode list")->required();
  t->add_option("--data", tr.data, "build-suim-fss output or raw corpus root")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--set", tr.overrides, "Override a configuration key (key=value), repeatable");
  t->add_option("--resume", tr.resume, "Continue from this checkpoint");
  add_corpus_flags(t, tr.corpus);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Per-class IoU and mIoU over a frozen episode list");
  e->add_option("--checkpoint", ev.checkpoint, "Weights or checkpoint file")->required();
  e->add_option("--episodes", ev.episodes, "Frozen test episode list")->required();
  e->add_option("--out", ev.out, "Report JSON path (Markdown and CSV tables are written alongside)")->required();
  e->add_option("--data", ev.data, "Corpus; defaults to the one recorded in the checkpoint");
  e->add_option("--fold-id", ev.fold_id, "Fold label for the report");
  e->add_flag("--per-episode-mean", ev.per_episode_mean, "Average per-episode IoU instead of pooling pixel counts");
  e->add_option("--threads", ev.threads, "Worker threads (with --fast)");
  e->add_option("--save-masks", ev.save_masks, "Directory for predicted masks");
  add_corpus_flags(e, ev.corpus);

  ProbeArgs pr;
  auto* p = app.add_subcommand("probe-prior", "Prior-mask heatmaps and fragility scores");
  p->add_option("--data", pr.data, "build-suim-fss output or raw corpus root")->required();
  p->add_option("--out", pr.out, "Output directory")->required();
  p->add_option("--episodes", pr.episodes, "Episode list; sampled over all classes when absent");
  p->add_option("--checkpoint", pr.checkpoint, "Trained weights; a fresh network otherwise");
  p->add_option("--n", pr.n, "Episodes to sample when no list is given");
  p->add_option("--seed", pr.seed, "Sampler seed");
  p->add_option("--resolution", pr.resolution, "Input resolution (default: checkpoint's, or 64)");
  add_corpus_flags(p, pr.corpus);

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Cross-fold results table from eval reports");
  r->add_option("--inputs", rp.inputs, "eval report JSON files, one per fold")->required();
  r->add_option("--out", rp.out, "Output directory")->required();
  r->add_option("--label", rp.label, "Row label");
  r->add_option("--reference", rp.reference, "Append the published row: uws:1, uws:5, suim-fss:1 or suim-fss:5")
      ->transform([](std::string v) {
        for (auto& c : v) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return v;
      })
      ->check(CLI::IsMember({"UWS:1", "UWS:5", "SUIM-FSS:1", "SUIM-FSS:5"}));
  r->add_flag("--plot", rp.plot, "Render a per-fold bar chart (miou.png)");

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return 2;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return 2;
  }

  Context ctx{std::vector<std::string>(argv, argv + argc), out, err, fast};
  try {
    if (*b) return run_build(ctx, build);
    if (*s) return run_sample(ctx, sample);
    if (*t) return run_train(ctx, tr);
    if (*e) return run_eval(ctx, ev);
    if (*p) return run_probe(ctx, pr);
    if (*r) return run_report(ctx, rp);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return ex.code() == ErrorCode::UsageError ? 2 : 1;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: IoError: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace fssuw::cli
