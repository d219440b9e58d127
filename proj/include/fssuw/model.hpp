#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "fusion.hpp"
#include "losses.hpp"
#include "weights.hpp"

namespace fssuw {

struct ModelConfig {
  EncoderConfig sfe = EncoderConfig::sfe();
  EncoderConfig fee = EncoderConfig::fee();
  FusionConfig fusion;
  double temperature = kDefaultTemperature;
  bool use_align = true;

  void validate() const {
    sfe.validate();
    if (fusion.use_fee) fee.validate();
    fusion.validate();
    require(temperature > 0, ErrorCode::InvalidArgument, "temperature must be positive");
  }

  /// Everything that changes the parameter layout or the forward graph.
  std::string describe() const {
    return sfe.describe() + "|" + (fusion.use_fee ? fee.describe() : std::string("nofee")) + "|" +
           fusion.describe() + "|a" + std::to_string(temperature) + (use_align ? "|align" : "");
  }
};

template <typename T>
struct ForwardResult {
  ag::Var<T> total;
  ag::Var<T> ce;
  ag::Var<T> dice;
  ag::Var<T> align;
  ag::Var<T> features;       // [K+1, C', H', W'], supports first
  ag::Var<T> query_logits;   // [2, H', W']
  ag::Var<T> logits_full;    // [2, R, R]

  LossBreakdown breakdown(bool align_enabled) const {
    return total_loss(static_cast<double>(ce.item()), static_cast<double>(dice.item()),
                      static_cast<double>(align.item()), align_enabled);
  }
};

/// Dual-encoder prototype network: SFE (+ FEE) -> fusion -> MAP prototypes ->
/// cosine logits.
template <typename T>
class FssuwNet {
 public:
  explicit FssuwNet(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    sfe_ = std::make_unique<Encoder<T>>(config_.sfe, params_, "sfe", rng);
    std::size_t high = config_.sfe.high_channels(), low = config_.sfe.low_channels();
    if (config_.fusion.use_fee) {
      fee_ = std::make_unique<Encoder<T>>(config_.fee, params_, "fee", rng);
      high += config_.fee.high_channels();
      low += config_.fee.low_channels();
    }
    fusion_ = std::make_unique<Fusion<T>>(config_.fusion, high, low, params_, "fusion", rng);
  }

  const ModelConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const Fusion<T>& fusion() const { return *fusion_; }
  const Encoder<T>& sfe() const { return *sfe_; }
  const Encoder<T>* fee() const { return fee_.get(); }

  std::uint64_t architecture_hash() const { return fssuw::architecture_hash(params_, config_.describe()); }

  /// Encoder stage for a stack of images [N,3,H,W]: SFE features, with FEE
  /// features concatenated along channels when enabled.
  EncodedBatch<T> encode(const ag::Var<T>& images) const {
    auto s = sfe_->forward(images);
    if (!fee_) return s;
    auto e = fee_->forward(images);
    return {ag::concat_channels<T>({s.low, e.low}), ag::concat_channels<T>({s.high, e.high})};
  }

  /// Fused features for a stack of images [N,3,H,W] -> [N,C',H/8,W/8].
  ag::Var<T> features(const ag::Var<T>& images) const {
    const auto e = encode(images);
    return fusion_->forward(e.high, e.low);
  }

  static ag::Var<T> episode_images(const Episode<T>& ep) {
    std::vector<Tensor<T>> imgs = ep.support_images;
    imgs.push_back(ep.query_image);
    return ag::constant(stack(imgs));
  }

  /// Full training graph for one episode.
  ForwardResult<T> forward(const Episode<T>& ep) const { return forward_encoded(encode(episode_images(ep)), ep); }

  /// Training graph from precomputed encoder output (supports first, query last).
  ForwardResult<T> forward_encoded(const EncodedBatch<T>& enc, const Episode<T>& ep) const {
    const std::size_t k = ep.k();
    require(k > 0 && ep.support_masks.size() == k, ErrorCode::InvalidArgument, "episode without supports");
    ForwardResult<T> r;
    r.features = fusion_->forward(enc.high, enc.low);
    const auto& fs = r.features.shape();
    const std::size_t h = fs[2], w = fs[3];

    std::vector<ag::Var<T>> fg, bg;
    for (std::size_t i = 0; i < k; ++i) {
      const Mask m = mask_to_resolution(ep.support_masks[i], h, w);
      fg.push_back(ag::masked_average_pool(r.features, i, m));
      const Mask mc = complement(m);
      if (count_nonzero(mc) > 0) bg.push_back(ag::masked_average_pool(r.features, i, mc));
    }
    require(!bg.empty(), ErrorCode::EmptyMask, "no support has background pixels at feature resolution");
    const auto fg_proto = ag::mean_of(fg);
    const auto bg_proto = ag::mean_of(bg);
    const T alpha = static_cast<T>(config_.temperature);
    r.query_logits = ag::two_channel_logits(ag::cosine_map(r.features, k, bg_proto),
                                            ag::cosine_map(r.features, k, fg_proto), alpha);
    r.logits_full = ag::resize_bilinear(r.query_logits, ep.query_gt.dim(0), ep.query_gt.dim(1));
    auto ml = ag::mask_loss(r.logits_full, ep.query_gt);
    r.ce = ml.ce;
    r.dice = ml.dice;
    r.align = config_.use_align
                  ? ag::align_loss(r.features, r.query_logits.value(), ep.support_masks, alpha)
                  : ag::constant(Tensor<T>({1}, T{0}));
    r.total = ag::sum_scalars<T>({ml.value, r.align});
    return r;
  }

  /// Predicted query mask at (out_h, out_w), by default the query's original
  /// resolution.
  Prediction<T> predict(const Episode<T>& ep, std::size_t out_h = 0, std::size_t out_w = 0) const {
    if (out_h == 0 || out_w == 0) {
      out_h = ep.query_gt_full.dim(0);
      out_w = ep.query_gt_full.dim(1);
    }
    const auto r = forward_no_loss(ep);
    Prediction<T> p;
    p.logits = resize_bilinear(r, out_h, out_w);
    p.mask = argmax_mask(p.logits);
    return p;
  }

  /// Low-resolution query logits [2,H',W'] without any loss terms.
  Tensor<T> forward_no_loss(const Episode<T>& ep) const {
    const Tensor<T> f = features(episode_images(ep)).value();
    const std::size_t k = ep.k(), h = f.dim(2), w = f.dim(3);
    std::vector<Prototype<T>> fg, bg;
    for (std::size_t i = 0; i < k; ++i) {
      const Tensor<T> fi = take(f, i);
      const Mask m = mask_to_resolution(ep.support_masks[i], h, w);
      fg.push_back(masked_average_pool(fi, m));
      if (count_nonzero(complement(m)) > 0) bg.push_back(background_prototype(fi, m));
    }
    require(!bg.empty(), ErrorCode::EmptyMask, "no support has background pixels at feature resolution");
    const auto scores = cosine_score(merge_prototypes(fg), merge_prototypes(bg), take(f, k));
    Tensor<T> logits({2, h, w});
    const T alpha = static_cast<T>(config_.temperature);
    for (std::size_t i = 0; i < h * w; ++i) {
      logits[i] = alpha * scores.bg_scores[i];
      logits[h * w + i] = alpha * scores.fg_scores[i];
    }
    return logits;
  }

  void save(const std::filesystem::path& path, Metadata meta = {}) const {
    meta["model"] = config_.describe();
    save_weights(path, params_, architecture_hash(), meta);
  }

  Metadata load(const std::filesystem::path& path) { return load_weights(path, params_, architecture_hash()); }

 private:
  ModelConfig config_;
  ParamSet<T> params_;
  std::unique_ptr<Encoder<T>> sfe_;
  std::unique_ptr<Encoder<T>> fee_;
  std::unique_ptr<Fusion<T>> fusion_;
};

}  // namespace fssuw
