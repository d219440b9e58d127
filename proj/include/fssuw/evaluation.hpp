#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "trainer.hpp"

namespace fssuw {

/// |pred & gt| / |pred | gt|; 1 when both masks are empty.
inline double iou(const Mask& pred, const Mask& gt) {
  require_shape(pred.shape(), gt.shape(), "iou prediction");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct OverlapCounts {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
};

inline OverlapCounts overlap(const Mask& pred, const Mask& gt) {
  require_shape(pred.shape(), gt.shape(), "overlap prediction");
  OverlapCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.intersection += p && g;
    c.union_ += p || g;
  }
  return c;
}

struct EpisodeOutcome {
  int class_id = 0;
  OverlapCounts counts;
  double iou = 0;
};

struct MetricsReport {
  int fold_id = 0;
  std::map<int, double> per_class_iou;
  double fold_miou = 0;
  std::vector<EpisodeOutcome> episodes;  // in list order
  std::size_t skipped = 0;
};

/// Unweighted mean over classes.
inline double mean_iou(const std::map<int, double>& per_class) {
  require(!per_class.empty(), ErrorCode::EmptyEpisodeList, "no classes to average");
  double s = 0;
  for (const auto& [_, v] : per_class) s += v;
  return s / static_cast<double>(per_class.size());
}

/// Per-class IoU from episode outcomes. By default intersections and unions are
/// summed over all episodes of a class; per_episode_mean averages episode IoUs
/// instead.
inline std::map<int, double> class_ious(const std::vector<EpisodeOutcome>& outcomes, bool per_episode_mean = false) {
  std::map<int, OverlapCounts> acc;
  std::map<int, std::pair<double, std::size_t>> means;
  for (const auto& o : outcomes) {
    acc[o.class_id].intersection += o.counts.intersection;
    acc[o.class_id].union_ += o.counts.union_;
    means[o.class_id].first += o.iou;
    means[o.class_id].second += 1;
  }
  std::map<int, double> out;
  for (const auto& [c, counts] : acc) {
    if (per_episode_mean)
      out[c] = means[c].first / static_cast<double>(means[c].second);
    else
      out[c] = counts.union_ == 0 ? 1.0 : static_cast<double>(counts.intersection) / static_cast<double>(counts.union_);
  }
  return out;
}

struct EvalOptions {
  bool per_episode_mean = false;
  std::size_t threads = 1;
  fs::path save_masks_dir;  // write each predicted mask as a PNG when set
};

template <typename T>
using Predictor = std::function<Mask(const Episode<T>&)>;

/// Evaluate a predictor over a frozen episode list. Predictions are compared
/// with the query ground truth at its original resolution.
template <typename T>
MetricsReport evaluate_fold(const Predictor<T>& predict, const std::vector<EpisodeSpec>& episodes,
                            const DatasetIndex& index, const Preprocess& pre, int fold_id = 0,
                            const EvalOptions& opts = {}) {
  require(!episodes.empty(), ErrorCode::EmptyEpisodeList, "evaluation episode list is empty");
  const std::size_t n = episodes.size();
  std::vector<std::optional<EpisodeOutcome>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      const auto& spec = episodes[i];
      Episode<T> ep;
      try {
        ep = materialize_episode<T>(spec, index, pre, spec.k());
      } catch (const Error& e) {
        if (e.code() == ErrorCode::EmptyMaskAfterResize) return;
        throw;
      }
      const Mask pred = predict(ep);
      require_shape(pred.shape(), ep.query_gt_full.shape(), "prediction");
      EpisodeOutcome o;
      o.class_id = spec.class_id;
      o.counts = overlap(pred, ep.query_gt_full);
      o.iou = iou(pred, ep.query_gt_full);
      if (!opts.save_masks_dir.empty()) {
        Tensor<std::uint8_t> png({pred.dim(0), pred.dim(1), 1});
        for (std::size_t p = 0; p < pred.size(); ++p) png[p] = pred[p] ? 255 : 0;
        char name[32];
        std::snprintf(name, sizeof name, "episode_%06zu.png", i);
        io::write_png(opts.save_masks_dir / name, png);
      }
      slots[i] = o;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += threads) work(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  MetricsReport r;
  r.fold_id = fold_id;
  for (auto& s : slots) {
    if (s)
      r.episodes.push_back(*s);
    else
      ++r.skipped;
  }
  require(!r.episodes.empty(), ErrorCode::EmptyEpisodeList, "every episode was rejected at this resolution");
  r.per_class_iou = class_ious(r.episodes, opts.per_episode_mean);
  r.fold_miou = mean_iou(r.per_class_iou);
  return r;
}

template <typename T>
MetricsReport evaluate_fold(const FssuwNet<T>& model, const std::vector<EpisodeSpec>& episodes,
                            const DatasetIndex& index, const Preprocess& pre, int fold_id = 0,
                            const EvalOptions& opts = {}) {
  return evaluate_fold<T>([&model](const Episode<T>& ep) { return model.predict(ep).mask; }, episodes, index, pre,
                          fold_id, opts);
}

inline nlohmann::ordered_json to_json(const MetricsReport& r, const ClassMap* classes = nullptr) {
  nlohmann::ordered_json j;
  j["fold_id"] = r.fold_id;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [c, v] : r.per_class_iou) {
    const std::string key = classes && classes->contains(c) ? classes->by_id(c).name : std::to_string(c);
    per[key] = v;
  }
  j["per_class_iou"] = per;
  j["fold_miou"] = r.fold_miou;
  j["episodes"] = r.episodes.size();
  j["skipped"] = r.skipped;
  return j;
}

// ---------------------------------------------------------------------------
// Tables

struct TableRow {
  std::string label;
  std::vector<double> folds;  // mIoU in [0,1]
  double mean = 0;
};

inline TableRow make_row(std::string label, std::vector<double> folds) {
  require(!folds.empty(), ErrorCode::InvalidArgument, "table row needs at least one fold");
  const double mean = std::accumulate(folds.begin(), folds.end(), 0.0) / static_cast<double>(folds.size());
  return {std::move(label), std::move(folds), mean};
}

/// Published mIoU of the reference method (fold values, then mean), kept for
/// context next to locally produced rows.
struct ReferenceRow {
  std::string dataset;
  std::size_t shots;
  std::vector<double> folds;
  double mean;
};

inline const std::vector<ReferenceRow>& reference_rows() {
  static const std::vector<ReferenceRow> rows{
      {"UWS", 1, {0.7323, 0.6362, 0.6925, 0.7211}, 0.6955},
      {"UWS", 5, {0.7492, 0.6562, 0.7206, 0.7336}, 0.7149},
      {"SUIM-FSS", 1, {0.4140, 0.4403}, 0.4272},
      {"SUIM-FSS", 5, {0.4604, 0.5281}, 0.4943},
  };
  return rows;
}

inline TableRow to_row(const ReferenceRow& r) {
  return {"FSSUWNet (published, " + r.dataset + " " + std::to_string(r.shots) + "-shot)", r.folds, r.mean};
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

inline std::string fold_header(std::size_t i, std::size_t nfolds) {
  return (nfolds == 2 ? "Split-" : "Fold-") + std::to_string(i);
}

/// Markdown table: Method | Fold-0 ... | Mean, values as percentages.
inline std::string render_markdown(const std::vector<TableRow>& rows) {
  require(!rows.empty(), ErrorCode::InvalidArgument, "empty table");
  const std::size_t nf = rows.front().folds.size();
  std::string s = "| Method |";
  for (std::size_t i = 0; i < nf; ++i) s += " " + fold_header(i, nf) + " |";
  s += " Mean |\n|---|";
  for (std::size_t i = 0; i <= nf; ++i) s += "---:|";
  s += "\n";
  for (const auto& r : rows) {
    require(r.folds.size() == nf, ErrorCode::ShapeMismatch, "table rows have different fold counts");
    s += "| " + r.label + " |";
    for (double v : r.folds) s += " " + percent(v) + " |";
    s += " " + percent(r.mean) + " |\n";
  }
  return s;
}

inline std::string render_csv(const std::vector<TableRow>& rows) {
  require(!rows.empty(), ErrorCode::InvalidArgument, "empty table");
  const std::size_t nf = rows.front().folds.size();
  std::string s = "method";
  for (std::size_t i = 0; i < nf; ++i) s += "," + fold_header(i, nf);
  s += ",Mean\n";
  for (const auto& r : rows) {
    require(r.folds.size() == nf, ErrorCode::ShapeMismatch, "table rows have different fold counts");
    s += r.label;
    for (double v : r.folds) s += "," + percent(v);
    s += "," + percent(r.mean) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct AggregateReport {
  std::vector<MetricsReport> folds;
  double mean_over_folds = 0;
};

inline double mean_over_folds(const std::vector<MetricsReport>& folds) {
  require(!folds.empty(), ErrorCode::InvalidArgument, "no folds");
  double s = 0;
  for (const auto& f : folds) s += f.fold_miou;
  return s / static_cast<double>(folds.size());
}

struct CrossValidationPlan {
  TrainConfig train;
  std::size_t train_pairs = 1000;
  std::vector<std::vector<EpisodeSpec>> test_lists;  // one frozen list per fold
  fs::path out_dir;                                  // per-fold runs land in fold_<i>/
  std::string label = "FSSUWNet (this build)";
  EvalOptions eval;
};

/// Train on each fold's training classes, evaluate on its frozen test list,
/// and write table.md / table.csv into out_dir when set.
template <typename T>
AggregateReport cross_validate(const CrossValidationPlan& plan, const std::vector<FoldConfig>& folds,
                               const DatasetIndex& index) {
  require(plan.test_lists.size() == folds.size(), ErrorCode::InvalidArgument, "one test list per fold required");
  AggregateReport agg;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];
    for (const auto& e : plan.test_lists[f])
      require(fold.test_classes.count(e.class_id), ErrorCode::InvalidArgument,
              "test list for fold " + std::to_string(f) + " contains training class " + std::to_string(e.class_id));
    const auto train_specs = sample_training_pairs(fold, index, plan.train_pairs, plan.train.seed, plan.train.k_shot);
    FssuwNet<T> model(plan.train.model(), plan.train.seed);
    TrainOptions topts;
    if (!plan.out_dir.empty()) topts.out_dir = plan.out_dir / ("fold_" + std::to_string(f));
    train(model, plan.train, train_specs, index, topts);
    agg.folds.push_back(evaluate_fold(model, plan.test_lists[f], index, plan.train.preprocess(), fold.fold_id, plan.eval));
  }
  agg.mean_over_folds = mean_over_folds(agg.folds);
  if (!plan.out_dir.empty()) {
    std::vector<double> v;
    for (const auto& r : agg.folds) v.push_back(r.fold_miou);
    const std::vector<TableRow> rows{make_row(plan.label, v)};
    fs::create_directories(plan.out_dir);
    std::ofstream(plan.out_dir / "table.md") << render_markdown(rows);
    std::ofstream(plan.out_dir / "table.csv") << render_csv(rows);
  }
  return agg;
}

}  // namespace fssuw
