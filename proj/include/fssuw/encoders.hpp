#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nn.hpp"

namespace fssuw {

enum class EncoderVariant { SFE, FEE };

/// Block-structured encoder description. Each entry of stride_schedule is the
/// downsampling factor applied on entry to that block (1 or 2).
struct EncoderConfig {
  std::size_t base_width = 16;
  std::vector<std::size_t> stride_schedule{1, 2, 2, 2, 1};
  bool dilate_final = true;
  EncoderVariant variant = EncoderVariant::SFE;

  /// VGG-16-shaped five-block stack; low tap after block 2, high taps after
  /// blocks 4 and 5.
  static EncoderConfig sfe(std::size_t base_width = 16) {
    return {base_width, {1, 2, 2, 2, 1}, true, EncoderVariant::SFE};
  }
  /// Three-block hierarchical conv/GELU encoder; low tap after block 1, high
  /// tap after block 3.
  static EncoderConfig fee(std::size_t base_width = 8) {
    return {base_width, {2, 2, 2}, false, EncoderVariant::FEE};
  }

  std::size_t block_count() const { return variant == EncoderVariant::SFE ? 5 : 3; }
  std::size_t low_tap() const { return variant == EncoderVariant::SFE ? 1 : 0; }

  std::size_t block_width(std::size_t block) const {
    if (variant == EncoderVariant::SFE) {
      static constexpr std::size_t mult[] = {1, 2, 4, 8, 8};
      return base_width * mult[block];
    }
    return base_width << block;
  }

  std::size_t low_channels() const { return block_width(low_tap()); }
  std::size_t high_channels() const {
    return variant == EncoderVariant::SFE ? block_width(3) + block_width(4) : block_width(2);
  }

  void validate() const {
    require(base_width >= 4, ErrorCode::InvalidArgument, "encoder base_width must be >= 4");
    require(stride_schedule.size() == block_count(), ErrorCode::InvalidArgument,
            "stride schedule needs one entry per block");
    std::size_t product = 1, low = 0;
    for (std::size_t i = 0; i < stride_schedule.size(); ++i) {
      require(stride_schedule[i] == 1 || stride_schedule[i] == 2, ErrorCode::InvalidArgument,
              "block strides must be 1 or 2");
      product *= stride_schedule[i];
      if (i == low_tap()) low = product;
      if (variant == EncoderVariant::SFE && i == 3)
        require(product == 8, ErrorCode::InvalidArgument, "block 4 must sit at stride 8");
    }
    require(low == 2, ErrorCode::InvalidArgument, "low-level tap must sit at stride 2");
    require(product == 8, ErrorCode::InvalidArgument, "high-level tap must sit at stride 8");
  }

  std::string describe() const {
    std::string s = variant == EncoderVariant::SFE ? "sfe" : "fee";
    s += ":w" + std::to_string(base_width) + ":s";
    for (auto v : stride_schedule) s += std::to_string(v);
    s += dilate_final ? ":d" : ":n";
    return s;
  }
};

template <typename T>
struct FeatureBundle {
  Tensor<T> low;   // [C_low, H/2, W/2]
  Tensor<T> high;  // [C_high, H/8, W/8]
  std::pair<std::size_t, std::size_t> strides{2, 8};
};

/// Differentiable encoder output for a batch: low [N,C_low,H/2,W/2],
/// high [N,C_high,H/8,W/8].
template <typename T>
struct EncodedBatch {
  ag::Var<T> low;
  ag::Var<T> high;
};

inline void check_divisible_input(const Shape& s) {
  require(s.size() == 4 && s[1] == 3, ErrorCode::ShapeMismatch, "encoder expects [N,3,H,W], got " + shape_str(s));
  require(s[2] % 8 == 0 && s[3] % 8 == 0 && s[2] > 0 && s[3] > 0, ErrorCode::IndivisibleInput,
          "input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " is not divisible by 8");
}

template <typename T>
class Encoder {
 public:
  Encoder(EncoderConfig config, ParamSet<T>& params, const std::string& prefix, Rng& rng)
      : config_(std::move(config)) {
    config_.validate();
    if (config_.variant == EncoderVariant::SFE)
      build_sfe(params, prefix, rng);
    else
      build_fee(params, prefix, rng);
  }

  const EncoderConfig& config() const { return config_; }

  EncodedBatch<T> forward(const ag::Var<T>& images) const {
    check_divisible_input(images.shape());
    return config_.variant == EncoderVariant::SFE ? forward_sfe(images) : forward_fee(images);
  }

  /// Single image [3,H,W] -> bundle.
  FeatureBundle<T> encode(const Tensor<T>& image) const {
    require(image.rank() == 3, ErrorCode::ShapeMismatch, "encode expects [3,H,W]");
    Shape s = image.shape();
    s.insert(s.begin(), 1);
    auto out = forward(ag::constant(image.reshaped(s)));
    return {take(out.low.value(), 0), take(out.high.value(), 0), {2, 8}};
  }

 private:
  struct FeeBlock {
    Conv2d<T> down;
    Conv2d<T> sub1;
    Conv2d<T> sub2;
  };

  void build_sfe(ParamSet<T>& params, const std::string& prefix, Rng& rng) {
    static constexpr std::size_t depth[] = {2, 2, 3, 3, 3};
    std::size_t cin = 3;
    for (std::size_t b = 0; b < 5; ++b) {
      const std::size_t width = config_.block_width(b);
      const std::size_t dil = (b == 4 && config_.dilate_final) ? 2 : 1;
      std::vector<Conv2d<T>> convs;
      for (std::size_t i = 0; i < depth[b]; ++i) {
        const std::string name = prefix + ".block" + std::to_string(b + 1) + ".conv" + std::to_string(i + 1);
        convs.push_back(Conv2d<T>::make(params, name, cin, width, 3, {1, dil, dil}, rng));
        cin = width;
      }
      sfe_blocks_.push_back(std::move(convs));
    }
  }

  void build_fee(ParamSet<T>& params, const std::string& prefix, Rng& rng) {
    std::size_t cin = 3;
    for (std::size_t b = 0; b < 3; ++b) {
      const std::size_t width = config_.block_width(b);
      const std::string name = prefix + ".block" + std::to_string(b + 1);
      const std::size_t s = config_.stride_schedule[b];
      FeeBlock blk{Conv2d<T>::make(params, name + ".down", cin, width, 3, {s, 1, 1}, rng),
                   Conv2d<T>::make(params, name + ".sub1", width, width, 3, {1, 1, 1}, rng),
                   Conv2d<T>::make(params, name + ".sub2", width, width, 3, {1, 1, 1}, rng)};
      fee_blocks_.push_back(std::move(blk));
      cin = width;
    }
  }

  EncodedBatch<T> forward_sfe(ag::Var<T> x) const {
    ag::Var<T> low, b4;
    for (std::size_t b = 0; b < sfe_blocks_.size(); ++b) {
      if (config_.stride_schedule[b] == 2) x = ag::max_pool2(x);
      for (const auto& conv : sfe_blocks_[b]) x = ag::relu(conv(x));
      if (b == config_.low_tap()) low = x;
      if (b == 3) b4 = x;
    }
    return {low, ag::concat_channels<T>({b4, x})};
  }

  EncodedBatch<T> forward_fee(ag::Var<T> x) const {
    ag::Var<T> low;
    for (std::size_t b = 0; b < fee_blocks_.size(); ++b) {
      const auto& blk = fee_blocks_[b];
      x = blk.down(x);
      x = ag::add(x, ag::gelu(blk.sub1(x)));
      x = ag::add(x, ag::gelu(blk.sub2(x)));
      if (b == config_.low_tap()) low = x;
    }
    return {low, x};
  }

  EncoderConfig config_;
  std::vector<std::vector<Conv2d<T>>> sfe_blocks_;
  std::vector<FeeBlock> fee_blocks_;
};

/// Encode one image with a Shared Feature Encoder built from `params`.
template <typename T>
FeatureBundle<T> sfe_encode(const Tensor<T>& image, const Encoder<T>& encoder) {
  require(encoder.config().variant == EncoderVariant::SFE, ErrorCode::InvalidArgument, "not an SFE");
  return encoder.encode(image);
}

template <typename T>
FeatureBundle<T> fee_encode(const Tensor<T>& image, const Encoder<T>& encoder) {
  require(encoder.config().variant == EncoderVariant::FEE, ErrorCode::InvalidArgument, "not an FEE");
  return encoder.encode(image);
}

}  // namespace fssuw
