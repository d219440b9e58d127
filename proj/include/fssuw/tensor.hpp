#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace fssuw {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor with value semantics. Feature maps use [N,C,H,W],
/// single images [C,H,W], masks and label maps [H,W].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_size(shape_), ErrorCode::ShapeMismatch,
            "data length " + std::to_string(data_.size()) + " does not fill " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    require(shape_size(s) == size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    } else {
      return true;
    }
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T{}); }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Mask = Tensor<std::uint8_t>;
using LabelMap = Tensor<std::int32_t>;

inline void require_shape(const Shape& got, const Shape& want, const std::string& what) {
  require(got == want, ErrorCode::ShapeMismatch, what + ": expected " + shape_str(want) + ", got " + shape_str(got));
}

/// Slice of item n along the leading axis: [N, ...] -> [...].
template <typename T>
Tensor<T> take(const Tensor<T>& t, std::size_t n) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  const std::size_t stride = shape_size(s);
  require(n < t.dim(0), ErrorCode::ShapeMismatch, "take index out of range");
  std::vector<T> out(t.data() + n * stride, t.data() + (n + 1) * stride);
  return Tensor<T>(std::move(s), std::move(out));
}

/// Stack equal-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  require(!items.empty(), ErrorCode::InvalidArgument, "stack of nothing");
  Shape s = items.front().shape();
  std::vector<T> out;
  out.reserve(items.size() * shape_size(s));
  for (const auto& it : items) {
    require_shape(it.shape(), s, "stack");
    out.insert(out.end(), it.values().begin(), it.values().end());
  }
  s.insert(s.begin(), items.size());
  return Tensor<T>(std::move(s), std::move(out));
}

// ---------------------------------------------------------------------------
// Resampling kernels shared by preprocessing, the differentiable ops, and
// evaluation. Bilinear uses half-pixel centers without corner alignment.

struct LinearTap {
  std::size_t i0, i1;
  double w0, w1;
};

inline std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

/// Nearest-neighbour source index: floor(o * in / out).
inline std::size_t nearest_index(std::size_t o, std::size_t in, std::size_t out) {
  return std::min(in - 1, (o * in) / out);
}

/// Bilinear resize of the trailing two axes of any tensor of rank >= 2.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require(x.rank() >= 2, ErrorCode::ShapeMismatch, "resize needs rank >= 2");
  const std::size_t in_h = x.dim(x.rank() - 2), in_w = x.dim(x.rank() - 1);
  Shape s = x.shape();
  s[s.size() - 2] = out_h;
  s[s.size() - 1] = out_w;
  Tensor<T> y(s);
  const std::size_t planes = x.size() / (in_h * in_w);
  const auto th = bilinear_taps(in_h, out_h);
  const auto tw = bilinear_taps(in_w, out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * in_h * in_w;
    T* dst = y.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = th[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tw[ox];
        const double v = a.w0 * (b.w0 * src[a.i0 * in_w + b.i0] + b.w1 * src[a.i0 * in_w + b.i1]) +
                         a.w1 * (b.w0 * src[a.i1 * in_w + b.i0] + b.w1 * src[a.i1 * in_w + b.i1]);
        dst[oy * out_w + ox] = static_cast<T>(v);
      }
    }
  }
  return y;
}

/// Nearest-neighbour resize of a 2-D map.
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require(x.rank() == 2, ErrorCode::ShapeMismatch, "nearest resize expects [H,W]");
  const std::size_t in_h = x.dim(0), in_w = x.dim(1);
  Tensor<T> y({out_h, out_w});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const std::size_t sy = nearest_index(oy, in_h, out_h);
    for (std::size_t ox = 0; ox < out_w; ++ox) y.at(oy, ox) = x.at(sy, nearest_index(ox, in_w, out_w));
  }
  return y;
}

inline std::size_t count_nonzero(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(), [](auto v) { return v != 0; }));
}

}  // namespace fssuw
