#pragma once

#include <optional>
#include <string>

#include "encoders.hpp"

namespace fssuw {

/// Channel width of the fused features plus the three ablation axes.
struct FusionConfig {
  std::size_t c_prime = 64;
  bool swap_roles = false;  // route high-level features through the alignment module, low-level as "high"
  bool use_fee = true;
  bool use_fam = true;

  void validate() const {
    require(c_prime >= 2 && c_prime % 2 == 0, ErrorCode::InvalidArgument, "c_prime must be even and >= 2");
  }

  std::string describe() const {
    return "fusion:c" + std::to_string(c_prime) + (swap_roles ? ":swap" : "") + (use_fee ? ":fee" : "") +
           (use_fam ? ":fam" : "");
  }
};

template <typename T>
struct FusedPair {
  Tensor<T> f_support;  // [C',H',W']
  Tensor<T> f_query;    // [C',H',W']
};

/// Bring [N,C,H,W] to (h, w): identity, k x k average pooling when the input is
/// an exact integer multiple, bilinear otherwise.
template <typename T>
ag::Var<T> resize_to(const ag::Var<T>& x, std::size_t h, std::size_t w) {
  const std::size_t ih = x.shape()[2], iw = x.shape()[3];
  if (ih == h && iw == w) return x;
  if (ih > h && iw > w && ih % h == 0 && iw % w == 0 && ih / h == iw / w) return ag::avg_pool(x, ih / h);
  return ag::resize_bilinear(x, h, w);
}

template <typename T>
class Fusion {
 public:
  /// high_channels / low_channels: channel counts of the encoder-concatenated
  /// high-level and low-level features feeding this module.
  Fusion(FusionConfig config, std::size_t high_channels, std::size_t low_channels, ParamSet<T>& params,
         const std::string& prefix, Rng& rng)
      : config_(config), high_in_(high_channels), low_in_(low_channels) {
    config_.validate();
    const std::size_t c = config_.c_prime;
    const std::size_t high_role_in = config_.swap_roles ? low_channels : high_channels;
    const std::size_t low_role_in = config_.swap_roles ? high_channels : low_channels;
    proj_high_ = Conv2d<T>::make(params, prefix + ".proj_high", high_role_in, c, 1, {}, rng);
    proj_low_ = Conv2d<T>::make(params, prefix + ".proj_low", low_role_in, c, 1, {}, rng);
    if (config_.use_fam) {
      fam_conv3_[0] = Conv2d<T>::make(params, prefix + ".fam.stage1.conv3", c, c, 3, {1, 1, 1}, rng);
      fam_conv1_[0] = Conv2d<T>::make(params, prefix + ".fam.stage1.conv1", c, c / 2, 1, {}, rng);
      fam_conv3_[1] = Conv2d<T>::make(params, prefix + ".fam.stage2.conv3", c / 2, c / 2, 3, {1, 1, 1}, rng);
      fam_conv1_[1] = Conv2d<T>::make(params, prefix + ".fam.stage2.conv1", c / 2, c, 1, {}, rng);
    }
  }

  const FusionConfig& config() const { return config_; }

  /// 1x1 projection for the high-level role (encoder features already
  /// concatenated per image and stacked along the batch axis).
  ag::Var<T> project_high(const ag::Var<T>& x) const { return proj_high_(x); }

  /// 1x1 projection for the low-level role, giving the raw low features.
  ag::Var<T> project_low(const ag::Var<T>& x) const { return proj_low_(x); }

  /// Feature Alignment Module: two stages of conv3x3 -> GELU -> conv1x1 ->
  /// maxpool 2x2; channels C' -> C'/2 -> C', spatial / 4.
  ag::Var<T> fam(const ag::Var<T>& x) const {
    require(config_.use_fam, ErrorCode::InvalidArgument, "alignment module disabled in this configuration");
    const auto& s = x.shape();
    require(s.size() == 4 && s[1] == config_.c_prime, ErrorCode::ShapeMismatch,
            "fam expects [N," + std::to_string(config_.c_prime) + ",H,W], got " + shape_str(s));
    require(s[2] % 4 == 0 && s[3] % 4 == 0 && s[2] > 0 && s[3] > 0, ErrorCode::IndivisibleInput,
            "fam input " + shape_str(s) + " is not divisible by 4");
    ag::Var<T> y = x;
    for (int stage = 0; stage < 2; ++stage) y = ag::max_pool2(fam_conv1_[stage](ag::gelu(fam_conv3_[stage](y))));
    return y;
  }

  /// Full fusion for a batch of N images (supports first, query last).
  /// high: [N, Nf(+Ne), H', W'], low: [N, Cf(+Ce), 4H', 4W'] -> [N, C', H', W'].
  ag::Var<T> forward(const ag::Var<T>& high, const ag::Var<T>& low) const {
    const auto& hs = high.shape();
    const auto& ls = low.shape();
    require(hs.size() == 4 && ls.size() == 4 && hs[0] == ls[0], ErrorCode::ShapeMismatch,
            "fusion inputs " + shape_str(hs) + " / " + shape_str(ls));
    require(hs[1] == high_in_ && ls[1] == low_in_, ErrorCode::ShapeMismatch,
            "fusion channel counts " + std::to_string(hs[1]) + "/" + std::to_string(ls[1]) + ", expected " +
                std::to_string(high_in_) + "/" + std::to_string(low_in_));
    require(ls[2] == 4 * hs[2] && ls[3] == 4 * hs[3], ErrorCode::ShapeMismatch,
            "low-level features must be 4x the high-level spatial size: " + shape_str(ls) + " vs " + shape_str(hs));
    const std::size_t h = hs[2], w = hs[3];
    if (!config_.swap_roles) {
      const auto f_high = project_high(high);
      const auto f0_low = project_low(low);
      const auto f_low = config_.use_fam ? fam(f0_low) : f0_low;
      return combine(f_high, f_low, h, w);
    }
    const auto f_high = project_high(low);
    auto f0_low = project_low(high);
    if (!config_.use_fam) return combine(f_high, f0_low, h, w);
    const std::size_t h4 = (h + 3) / 4 * 4, w4 = (w + 3) / 4 * 4;
    f0_low = resize_to(f0_low, h4, w4);
    return combine(f_high, fam(f0_low), h, w);
  }

  /// Element-wise sum at (h, w); either operand is resized first if needed.
  static ag::Var<T> combine(const ag::Var<T>& f_high, const ag::Var<T>& f_low, std::size_t h, std::size_t w) {
    require(f_high.shape()[0] == f_low.shape()[0] && f_high.shape()[1] == f_low.shape()[1], ErrorCode::ShapeMismatch,
            "combine: " + shape_str(f_high.shape()) + " vs " + shape_str(f_low.shape()));
    return ag::add(resize_to(f_high, h, w), resize_to(f_low, h, w));
  }

  // -------------------------------------------------------------------------
  // Tensor-level entry points for one support/query pair.

  /// Cat(fs, es) and Cat(fq, eq) per image, stacked, projected to C'.
  /// es / eq are ignored (may be empty) when the FEE is disabled.
  Tensor<T> fuse_high(const Tensor<T>& fs, const Tensor<T>& es, const Tensor<T>& fq, const Tensor<T>& eq) const {
    return project_high(pair_concat(fs, es, fq, eq)).value();
  }

  Tensor<T> fuse_low_raw(const Tensor<T>& fs, const Tensor<T>& es, const Tensor<T>& fq, const Tensor<T>& eq) const {
    return project_low(pair_concat(fs, es, fq, eq)).value();
  }

  Tensor<T> fam(const Tensor<T>& f0_low) const { return fam(ag::constant(f0_low)).value(); }

  /// Sum of the two streams split into (support, query). f_low may be absent;
  /// mismatched spatial sizes are resized to f_high's.
  static FusedPair<T> combine_and_split(const Tensor<T>& f_high, const std::optional<Tensor<T>>& f_low) {
    require(f_high.rank() == 4 && f_high.dim(0) == 2, ErrorCode::ShapeMismatch,
            "combine_and_split expects [2,C',H',W'], got " + shape_str(f_high.shape()));
    Tensor<T> sum = f_high;
    if (f_low) {
      sum = combine(ag::constant(f_high), ag::constant(*f_low), f_high.dim(2), f_high.dim(3)).value();
    }
    return {take(sum, 0), take(sum, 1)};
  }

 private:
  ag::Var<T> pair_concat(const Tensor<T>& fs, const Tensor<T>& es, const Tensor<T>& fq, const Tensor<T>& eq) const {
    require(fs.rank() == 3 && fq.rank() == 3, ErrorCode::ShapeMismatch, "expected [C,H,W] features");
    if (!config_.use_fee) {
      require_shape(fq.shape(), fs.shape(), "support/query features");
      return ag::constant(stack<T>({fs, fq}));
    }
    for (const auto* t : {&es, &fq, &eq}) {
      require(t->rank() == 3 && t->dim(1) == fs.dim(1) && t->dim(2) == fs.dim(2), ErrorCode::ShapeMismatch,
              "spatial mismatch: " + shape_str(t->shape()) + " vs " + shape_str(fs.shape()));
    }
    require(fs.dim(0) + es.dim(0) == fq.dim(0) + eq.dim(0), ErrorCode::ShapeMismatch,
            "support/query channel totals differ");
    auto cat = [](const Tensor<T>& a, const Tensor<T>& b) {
      Shape sa{1, a.dim(0), a.dim(1), a.dim(2)}, sb{1, b.dim(0), b.dim(1), b.dim(2)};
      return ag::concat_channels<T>({ag::constant(a.reshaped(sa)), ag::constant(b.reshaped(sb))});
    };
    return ag::concat_batch<T>({cat(fs, es), cat(fq, eq)});
  }

  FusionConfig config_;
  std::size_t high_in_, low_in_;
  Conv2d<T> proj_high_, proj_low_;
  Conv2d<T> fam_conv3_[2], fam_conv1_[2];
};

}  // namespace fssuw
