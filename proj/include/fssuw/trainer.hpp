#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"

namespace fssuw {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 1;  // episodes per iteration
  double lr0 = 0.001;
  double lr_decay = 0.1;
  std::size_t decay_every = 10000;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;
  std::size_t k_shot = 1;
  std::size_t max_iters = 0;         // 0: epochs x list length
  std::size_t checkpoint_every = 0;  // extra checkpoints every N iterations; 0: per epoch only
  std::size_t resolution = 256;
  std::size_t c_prime = 64;
  std::size_t sfe_width = 16;
  std::size_t fee_width = 8;
  bool use_fee = true;
  bool use_fam = true;
  bool swap_roles = false;
  bool use_align = true;
  double temperature = kDefaultTemperature;

  void validate() const {
    require(epochs > 0 && decay_every > 0 && resolution > 0, ErrorCode::InvalidArgument,
            "epochs, decay_every and resolution must be positive");
    require(batch_size == 1, ErrorCode::InvalidArgument, "batch_size is one episode per iteration");
    require(lr0 > 0 && lr_decay > 0 && momentum >= 0 && weight_decay >= 0, ErrorCode::InvalidArgument,
            "optimizer hyperparameters must be positive");
    require(resolution % 8 == 0, ErrorCode::IndivisibleInput, "resolution must be divisible by 8");
    check_shot_count(k_shot);
    model().validate();
  }

  ModelConfig model() const {
    ModelConfig m;
    m.sfe = EncoderConfig::sfe(sfe_width);
    m.fee = EncoderConfig::fee(fee_width);
    m.fusion.c_prime = c_prime;
    m.fusion.use_fee = use_fee;
    m.fusion.use_fam = use_fam;
    m.fusion.swap_roles = swap_roles;
    m.use_align = use_align;
    m.temperature = temperature;
    return m;
  }

  Preprocess preprocess() const {
    Preprocess p;
    p.resolution = resolution;
    return p;
  }

  /// Hash of everything that shapes the trajectory except its length, so a
  /// checkpoint can be resumed with more epochs or a larger iteration cap.
  std::uint64_t trajectory_hash() const {
    Fnv1a h;
    h.update(model().describe());
    for (double v : {lr0, lr_decay, momentum, weight_decay}) h.update_value(v);
    for (std::size_t v : {decay_every, k_shot, resolution, batch_size}) h.update_value<std::uint64_t>(v);
    h.update_value(seed);
    return h.digest();
  }
};

/// Stepwise schedule: lr0 * decay^floor(iter / decay_every).
inline double lr_at(const TrainConfig& cfg, std::size_t iter) {
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(iter / cfg.decay_every));
}

/// SGD with heavy-ball momentum and L2 weight decay applied to every
/// parameter, biases included:
///   g <- grad + wd * w;  v <- mu * v + g;  w <- w - lr * v.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamSet<T>& params, double lr) {
    const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), eta = static_cast<T>(lr);
    for (auto& [name, p] : params.items()) {
      auto& v = velocity_[name];
      auto& w = p.mutable_value();
      if (v.size() != w.size()) v = Tensor<T>(w.shape(), T{0});
      const Tensor<T> g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T d = g[i] + wd * w[i];
        v[i] = mu * v[i] + d;
        w[i] -= eta * v[i];
      }
    }
  }

  std::map<std::string, Tensor<T>>& velocity() { return velocity_; }
  const std::map<std::string, Tensor<T>>& velocity() const { return velocity_; }

 private:
  double momentum_, weight_decay_;
  std::map<std::string, Tensor<T>> velocity_;
};

struct LogRow {
  std::size_t iter = 0;
  double ce = 0, dice = 0, align = 0, total = 0, lr = 0;

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

inline std::string format_log_row(const LogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", r.iter, r.ce, r.dice, r.align, r.total, r.lr);
  return buf;
}

inline constexpr const char* kLogHeader = "iter,ce,dice,align,total,lr";

inline std::vector<LogRow> read_training_log(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open training log " + path.string());
  std::vector<LogRow> rows;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LogRow r;
    require(std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.iter, &r.ce, &r.dice, &r.align, &r.total, &r.lr) ==
                6,
            ErrorCode::CorruptFile, path.string() + ": malformed row " + line);
    rows.push_back(r);
  }
  return rows;
}

inline std::uint64_t episode_list_hash(const std::vector<EpisodeSpec>& episodes) {
  Fnv1a h;
  for (const auto& e : episodes) h.update(episode_line(e));
  return h.digest();
}

struct TrainOptions {
  fs::path out_dir;            // empty: no files written
  fs::path resume_from;        // checkpoint to continue from
  std::size_t stop_after = 0;  // stop once this many iterations are done in total (0: run to the end)
  std::function<void(const LogRow&)> on_iter;
  Metadata metadata;  // copied into every checkpoint
};

struct TrainResult {
  std::vector<LogRow> rows;  // rows produced by this call
  std::size_t iterations = 0;
  std::size_t skipped = 0;
  fs::path last_checkpoint;
};

namespace detail {

inline fs::path checkpoint_path(const fs::path& out, std::size_t iter) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "iter_%08zu.ckpt", iter);
  return out / "checkpoints" / buf;
}

}  // namespace detail

/// Write weights, optimizer state and counters.
template <typename T>
void save_checkpoint(const fs::path& path, const FssuwNet<T>& model, const Sgd<T>& opt, const TrainConfig& cfg,
                     std::size_t iter, std::uint64_t episodes_hash, const Metadata& extra = {}) {
  WeightFile wf;
  wf.arch_hash = model.architecture_hash();
  wf.metadata = extra;
  wf.metadata.insert({{"kind", "checkpoint"},
                 {"iter", std::to_string(iter)},
                 {"trajectory_hash", hex64(cfg.trajectory_hash())},
                 {"episodes_hash", hex64(episodes_hash)},
                 {"rng_state", Rng(cfg.seed).state()},
                 {"model", model.config().describe()}});
  for (const auto& [name, v] : model.params().items()) wf.tensors.emplace_back(name, store(v.value()));
  for (const auto& [name, v] : opt.velocity()) wf.tensors.emplace_back("opt.velocity." + name, store(v));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_weight_file(path, wf);
}

/// Restore weights and optimizer state; returns the iteration counter.
template <typename T>
std::size_t load_checkpoint(const fs::path& path, FssuwNet<T>& model, Sgd<T>& opt, const TrainConfig& cfg,
                            std::uint64_t episodes_hash) {
  require(fs::exists(path), ErrorCode::IoError, "missing checkpoint " + path.string());
  const Metadata meta = model.load(path);
  auto get = [&](const std::string& key) {
    auto it = meta.find(key);
    require(it != meta.end(), ErrorCode::CorruptFile, path.string() + ": no " + key + " entry");
    return it->second;
  };
  require(get("trajectory_hash") == hex64(cfg.trajectory_hash()), ErrorCode::ConfigMismatch,
          path.string() + ": checkpoint was trained with a different configuration");
  require(get("episodes_hash") == hex64(episodes_hash), ErrorCode::ConfigMismatch,
          path.string() + ": checkpoint was trained on a different episode list");
  const WeightFile wf = read_weight_file(path);
  const std::string prefix = "opt.velocity.";
  opt.velocity().clear();
  for (const auto& [name, t] : wf.tensors) {
    if (name.rfind(prefix, 0) != 0) continue;
    Tensor<T> v(t.shape);
    restore(t, v, name);
    opt.velocity()[name.substr(prefix.size())] = std::move(v);
  }
  return static_cast<std::size_t>(std::stoull(get("iter")));
}

/// Per-list cache of materialised episodes when they fit in a modest budget.
template <typename T>
class EpisodeSource {
 public:
  EpisodeSource(const std::vector<EpisodeSpec>& specs, const DatasetIndex& index, const Preprocess& pre, std::size_t k,
                std::size_t budget_bytes = std::size_t{512} << 20)
      : specs_(specs), index_(index), pre_(pre), k_(k) {
    const std::size_t per = (k + 1) * (3 * sizeof(T) + 1) * pre.resolution * pre.resolution;
    cache_enabled_ = per * specs.size() <= budget_bytes;
    if (cache_enabled_) cache_.resize(specs.size());
  }

  /// nullopt when the episode cannot be materialised at this resolution.
  const std::optional<Episode<T>>& get(std::size_t i) {
    if (cache_enabled_ && cache_[i].loaded) return cache_[i].ep;
    Slot s;
    s.loaded = true;
    try {
      s.ep = materialize_episode<T>(specs_[i], index_, pre_, k_);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyMaskAfterResize) throw;
    }
    if (cache_enabled_) {
      cache_[i] = std::move(s);
      return cache_[i].ep;
    }
    scratch_ = std::move(s);
    return scratch_.ep;
  }

 private:
  struct Slot {
    bool loaded = false;
    std::optional<Episode<T>> ep;
  };
  const std::vector<EpisodeSpec>& specs_;
  const DatasetIndex& index_;
  Preprocess pre_;
  std::size_t k_;
  bool cache_enabled_ = false;
  std::vector<Slot> cache_;
  Slot scratch_;
};

/// Episodic training. Iteration i consumes episode i mod |list|, so the list
/// is replayed in order every epoch and the position is recoverable from the
/// iteration counter alone.
template <typename T>
TrainResult train(FssuwNet<T>& model, const TrainConfig& cfg, const std::vector<EpisodeSpec>& episodes,
                  const DatasetIndex& index, const TrainOptions& opts = {}) {
  cfg.validate();
  require(!episodes.empty(), ErrorCode::EmptyEpisodeList, "training episode list is empty");
  for (const auto& e : episodes)
    require(e.k() == cfg.k_shot, ErrorCode::InvalidArgument,
            "episode with " + std::to_string(e.k()) + " supports in a " + std::to_string(cfg.k_shot) + "-shot run");
  const std::uint64_t ehash = episode_list_hash(episodes);
  Sgd<T> opt(cfg.momentum, cfg.weight_decay);
  std::size_t start = 0;
  if (!opts.resume_from.empty()) start = load_checkpoint(opts.resume_from, model, opt, cfg, ehash);

  const std::size_t n = episodes.size();
  std::size_t end = cfg.epochs * n;
  if (cfg.max_iters) end = std::min(end, cfg.max_iters);
  if (opts.stop_after) end = std::min(end, opts.stop_after);

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    const fs::path log_path = opts.out_dir / "train_log.csv";
    std::vector<LogRow> kept;
    if (start > 0 && fs::exists(log_path))
      for (const auto& r : read_training_log(log_path))
        if (r.iter < start) kept.push_back(r);
    log.open(log_path, std::ios::trunc);
    require(static_cast<bool>(log), ErrorCode::IoError, "cannot write " + log_path.string());
    log << kLogHeader << '\n';
    for (const auto& r : kept) log << format_log_row(r) << '\n';
  }

  TrainResult result;
  EpisodeSource<T> source(episodes, index, cfg.preprocess(), cfg.k_shot);
  for (std::size_t iter = start; iter < end; ++iter) {
    const std::size_t pos = iter % n;
    const auto& ep = source.get(pos);
    if (ep) {
      model.params().zero_grad();
      const auto r = model.forward(*ep);
      const LossBreakdown b = r.breakdown(cfg.use_align);
      if (!std::isfinite(b.total)) {
        if (!opts.out_dir.empty()) {
          nlohmann::ordered_json dump;
          dump["iter"] = iter;
          dump["episode"] = nlohmann::json::parse(episode_line(episodes[pos]));
          dump["ce"] = std::to_string(b.ce);
          dump["dice"] = std::to_string(b.dice);
          dump["align"] = std::to_string(b.align_loss);
          dump["lr"] = lr_at(cfg, iter);
          std::ofstream(opts.out_dir / "nonfinite_dump.json") << dump.dump(2) << '\n';
        }
        fail(ErrorCode::NonFiniteLoss, "iteration " + std::to_string(iter) + ", episode " + episode_line(episodes[pos]) +
                                           ": ce=" + std::to_string(b.ce) + " dice=" + std::to_string(b.dice) +
                                           " align=" + std::to_string(b.align_loss));
      }
      ag::backward(r.total);
      const double lr = lr_at(cfg, iter);
      opt.step(model.params(), lr);
      LogRow row{iter, b.ce, b.dice, b.align_loss, b.total, lr};
      if (log.is_open()) log << format_log_row(row) << '\n' << std::flush;
      if (opts.on_iter) opts.on_iter(row);
      result.rows.push_back(row);
    } else {
      ++result.skipped;
    }
    const std::size_t done = iter + 1;
    const bool epoch_end = done % n == 0;
    const bool periodic = cfg.checkpoint_every && done % cfg.checkpoint_every == 0;
    if (!opts.out_dir.empty() && (epoch_end || periodic || done == end)) {
      result.last_checkpoint = detail::checkpoint_path(opts.out_dir, done);
      save_checkpoint(result.last_checkpoint, model, opt, cfg, done, ehash, opts.metadata);
    }
  }
  result.iterations = end > start ? end - start : 0;
  return result;
}

// ---------------------------------------------------------------------------
// Gradient audit

struct AuditConfig {
  double fraction = 0.01;            // share of parameter scalars sampled
  std::size_t min_samples = 1;
  std::size_t max_samples = 0;       // 0: no cap
  double step = 1e-4;                // central-difference half step
  double floor = 1e-6;               // denominator floor for the relative error
  bool richardson = false;           // extrapolate central differences at step and step/2
  std::uint64_t seed = 0;
  std::vector<std::string> prefixes;  // restrict to parameters whose name starts with one of these
};

struct AuditSample {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct AuditReport {
  std::vector<AuditSample> samples;
  std::size_t skipped_nonsmooth = 0;  // perturbation crossed a relu/max-pool switch or flipped the predicted mask
  double max_rel_error = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compare analytic parameter gradients of the total loss with central
/// differences on a random subsample of parameter scalars. Encoder outputs are
/// reused when no sampled parameter lives in an encoder. A coordinate whose
/// +/- step changes the relu/max-pool routing or the predicted mask straddles
/// a kink and is skipped.
template <typename T>
AuditReport gradient_audit(FssuwNet<T>& model, const Episode<T>& ep, const AuditConfig& ac = {}) {
  auto& params = model.params();
  std::vector<std::pair<std::string, std::size_t>> pool;
  for (const auto& [name, v] : params.items()) {
    bool keep = ac.prefixes.empty();
    for (const auto& p : ac.prefixes) keep = keep || name.rfind(p, 0) == 0;
    if (keep)
      for (std::size_t i = 0; i < v.value().size(); ++i) pool.emplace_back(name, i);
  }
  require(!pool.empty(), ErrorCode::InvalidArgument, "no parameters selected for the audit");
  std::size_t count = static_cast<std::size_t>(std::ceil(ac.fraction * static_cast<double>(pool.size())));
  count = std::clamp<std::size_t>(count, std::min(ac.min_samples, pool.size()), pool.size());
  if (ac.max_samples) count = std::min(count, ac.max_samples);
  Rng rng(ac.seed);
  auto picks = rng.choose(pool.size(), count);
  std::sort(picks.begin(), picks.end());

  bool touches_encoder = false;
  for (auto i : picks) touches_encoder = touches_encoder || pool[i].first.rfind("fusion.", 0) != 0;
  std::optional<EncodedBatch<T>> cached;
  if (!touches_encoder) {
    const auto e = model.encode(FssuwNet<T>::episode_images(ep));
    cached = EncodedBatch<T>{ag::constant(e.low.value()), ag::constant(e.high.value())};
  }
  auto run = [&]() { return cached ? model.forward_encoded(*cached, ep) : model.forward(ep); };

  // Forward pass plus the routing it took through relu and max-pool.
  auto traced = [&]() {
    ag::RoutingTrace trace;
    auto r = run();
    return std::make_pair(std::move(r), trace.digest());
  };

  params.zero_grad();
  const auto [base, base_route] = traced();
  ag::backward(base.total);
  const Mask base_pred = argmax_mask(base.query_logits.value());
  std::map<std::string, Tensor<T>> grads;
  for (auto& [name, v] : params.items()) grads[name] = v.grad();

  AuditReport report;
  for (auto i : picks) {
    const auto& [name, idx] = pool[i];
    auto& w = params.at(name).mutable_value();
    const T orig = w[idx];
    bool smooth = true;
    // Central difference at half step h; clears `smooth` on a kink.
    auto central = [&](double h) {
      w[idx] = orig + static_cast<T>(h);
      const auto [plus, plus_route] = traced();
      w[idx] = orig - static_cast<T>(h);
      const auto [minus, minus_route] = traced();
      w[idx] = orig;
      smooth = smooth && plus_route == base_route && minus_route == base_route &&
               argmax_mask(plus.query_logits.value()) == base_pred && argmax_mask(minus.query_logits.value()) == base_pred;
      return (static_cast<double>(plus.total.item()) - static_cast<double>(minus.total.item())) / (2.0 * h);
    };
    const double coarse = central(ac.step);
    const double numeric = ac.richardson ? (4.0 * central(ac.step / 2) - coarse) / 3.0 : coarse;
    if (!smooth) {
      ++report.skipped_nonsmooth;
      continue;
    }
    AuditSample s;
    s.name = name;
    s.index = idx;
    s.analytic = static_cast<double>(grads[name][idx]);
    s.numeric = numeric;
    s.rel_error = relative_error(s.analytic, s.numeric, ac.floor);
    report.max_rel_error = std::max(report.max_rel_error, s.rel_error);
    report.samples.push_back(std::move(s));
  }
  return report;
}

}  // namespace fssuw
