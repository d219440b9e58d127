#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "autograd.hpp"

namespace fssuw {

enum class Polarity { Foreground, Background };

template <typename T>
struct Prototype {
  std::vector<T> vector;
  Polarity polarity = Polarity::Foreground;
  std::size_t shots_merged = 1;
};

template <typename T>
struct ScoreMap {
  Tensor<T> fg_scores;  // [H',W'] in [-1,1]
  Tensor<T> bg_scores;
};

template <typename T>
struct PriorMask {
  Tensor<T> values;  // [H',W'] in [0,1]
};

template <typename T>
struct Prediction {
  Mask mask;         // [H,W]
  Tensor<T> logits;  // [2,H,W], channel 0 background, channel 1 foreground
};

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kDefaultTemperature = 20.0;

/// Nearest-neighbour resample of a binary mask to feature resolution.
inline Mask mask_to_resolution(const Mask& m, std::size_t h, std::size_t w) {
  require(m.rank() == 2, ErrorCode::ShapeMismatch, "mask must be [H,W]");
  if (m.dim(0) == h && m.dim(1) == w) return m;
  return resize_nearest(m, h, w);
}

inline Mask complement(const Mask& m) {
  Mask out = m;
  for (auto& v : out.values()) v = v ? 0 : 1;
  return out;
}

namespace detail {

/// proto[c] = sum_p f[c,p] * m[p] / sum_p m[p], accumulated in row-major
/// pixel order.
template <typename T>
std::vector<T> masked_mean(const T* features, std::size_t channels, const Mask& m) {
  const std::size_t hw = m.size();
  std::size_t count = 0;
  for (std::size_t p = 0; p < hw; ++p) count += m[p] ? 1 : 0;
  require(count > 0, ErrorCode::EmptyMask, "mask has no pixels at feature resolution " + shape_str(m.shape()));
  std::vector<T> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* row = features + c * hw;
    T acc{0};
    for (std::size_t p = 0; p < hw; ++p)
      if (m[p]) acc += row[p];
    out[c] = acc / static_cast<T>(count);
  }
  return out;
}

template <typename T>
T vector_norm(const T* v, std::size_t n, std::size_t stride) {
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += v[i * stride] * v[i * stride];
  return std::sqrt(s);
}

/// Per-pixel cosine of f[:, p] against proto; writes H*W values.
template <typename T>
void cosine_pixels(const T* features, std::size_t channels, std::size_t hw, const T* proto, T eps, T* out) {
  const T pn = std::max(vector_norm(proto, channels, 1), eps);
  for (std::size_t p = 0; p < hw; ++p) {
    T dot{0}, sq{0};
    for (std::size_t c = 0; c < channels; ++c) {
      const T f = features[c * hw + p];
      dot += f * proto[c];
      sq += f * f;
    }
    const T v = dot / (std::max(std::sqrt(sq), eps) * pn);
    out[p] = std::clamp(v, T(-1), T(1));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Prototypes

/// Masked average pooling of [C',H',W'] features under a binary mask at any
/// resolution (nearest-neighbour resampled to H' x W').
template <typename T>
Prototype<T> masked_average_pool(const Tensor<T>& features, const Mask& mask) {
  require(features.rank() == 3, ErrorCode::ShapeMismatch, "features must be [C,H,W]");
  const Mask m = mask_to_resolution(mask, features.dim(1), features.dim(2));
  return {detail::masked_mean(features.data(), features.dim(0), m), Polarity::Foreground, 1};
}

template <typename T>
Prototype<T> background_prototype(const Tensor<T>& features, const Mask& mask) {
  require(features.rank() == 3, ErrorCode::ShapeMismatch, "features must be [C,H,W]");
  const Mask m = complement(mask_to_resolution(mask, features.dim(1), features.dim(2)));
  return {detail::masked_mean(features.data(), features.dim(0), m), Polarity::Background, 1};
}

template <typename T>
Prototype<T> merge_prototypes(const std::vector<Prototype<T>>& protos) {
  require(!protos.empty(), ErrorCode::InvalidArgument, "no prototypes to merge");
  if (protos.size() == 1) return protos.front();
  Prototype<T> out{std::vector<T>(protos.front().vector.size(), T{0}), protos.front().polarity, protos.size()};
  for (const auto& p : protos) {
    require(p.polarity == out.polarity, ErrorCode::PolarityMismatch, "cannot merge foreground with background");
    require(p.vector.size() == out.vector.size(), ErrorCode::ShapeMismatch, "prototype widths differ");
    for (std::size_t c = 0; c < p.vector.size(); ++c) out.vector[c] += p.vector[c];
  }
  for (auto& v : out.vector) v /= static_cast<T>(protos.size());
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

template <typename T>
T cosine(const std::vector<T>& u, const std::vector<T>& v, T eps = T(kCosineEps)) {
  require(u.size() == v.size(), ErrorCode::ShapeMismatch, "cosine of unequal lengths");
  T out;
  detail::cosine_pixels(u.data(), u.size(), 1, v.data(), eps, &out);
  return out;
}

template <typename T>
ScoreMap<T> cosine_score(const Prototype<T>& fg, const Prototype<T>& bg, const Tensor<T>& f_query,
                         T eps = T(kCosineEps)) {
  require(f_query.rank() == 3, ErrorCode::ShapeMismatch, "query features must be [C,H,W]");
  const std::size_t c = f_query.dim(0), h = f_query.dim(1), w = f_query.dim(2);
  require(fg.vector.size() == c && bg.vector.size() == c, ErrorCode::ShapeMismatch, "prototype width != C'");
  ScoreMap<T> out{Tensor<T>({h, w}), Tensor<T>({h, w})};
  detail::cosine_pixels(f_query.data(), c, h * w, fg.vector.data(), eps, out.fg_scores.data());
  detail::cosine_pixels(f_query.data(), c, h * w, bg.vector.data(), eps, out.bg_scores.data());
  return out;
}

/// Temperature-scaled two-channel logits upsampled to (h, w); the mask is the
/// channel argmax with ties resolved to background.
template <typename T>
Prediction<T> predict_mask(const ScoreMap<T>& scores, std::size_t h, std::size_t w,
                           T temperature = T(kDefaultTemperature)) {
  require_shape(scores.bg_scores.shape(), scores.fg_scores.shape(), "score maps");
  const std::size_t sh = scores.fg_scores.dim(0), sw = scores.fg_scores.dim(1);
  Tensor<T> low({2, sh, sw});
  for (std::size_t i = 0; i < sh * sw; ++i) {
    low[i] = temperature * scores.bg_scores[i];
    low[sh * sw + i] = temperature * scores.fg_scores[i];
  }
  Prediction<T> out{Mask({h, w}), resize_bilinear(low, h, w)};
  for (std::size_t i = 0; i < h * w; ++i) out.mask[i] = out.logits[h * w + i] > out.logits[i] ? 1 : 0;
  return out;
}

/// Argmax of [2,H,W] logits, ties to background.
template <typename T>
Mask argmax_mask(const Tensor<T>& logits) {
  require(logits.rank() == 3 && logits.dim(0) == 2, ErrorCode::ShapeMismatch, "logits must be [2,H,W]");
  const std::size_t hw = logits.dim(1) * logits.dim(2);
  Mask m({logits.dim(1), logits.dim(2)});
  for (std::size_t i = 0; i < hw; ++i) m[i] = logits[hw + i] > logits[i] ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Prior mask and fragility

/// For each query pixel, the maximum cosine against masked support pixels,
/// min-max normalised over the map. A flat map normalises to all zeros.
template <typename T>
PriorMask<T> prior_mask(const Tensor<T>& f_query, const Tensor<T>& f_support, const Mask& support_mask,
                        T eps = T(kCosineEps)) {
  require(f_query.rank() == 3 && f_support.rank() == 3 && f_query.dim(0) == f_support.dim(0), ErrorCode::ShapeMismatch,
          "prior features " + shape_str(f_query.shape()) + " vs " + shape_str(f_support.shape()));
  const std::size_t c = f_query.dim(0), qh = f_query.dim(1), qw = f_query.dim(2);
  const std::size_t sh = f_support.dim(1), sw = f_support.dim(2);
  const Mask m = mask_to_resolution(support_mask, sh, sw);
  require(count_nonzero(m) > 0, ErrorCode::EmptyMask, "support mask empty at feature resolution");

  // Normalised masked support vectors, row-major.
  std::vector<std::vector<T>> sup;
  for (std::size_t p = 0; p < sh * sw; ++p) {
    if (!m[p]) continue;
    std::vector<T> v(c);
    for (std::size_t k = 0; k < c; ++k) v[k] = f_support[k * sh * sw + p];
    sup.push_back(std::move(v));
  }
  PriorMask<T> out{Tensor<T>({qh, qw})};
  std::vector<T> q(c);
  for (std::size_t p = 0; p < qh * qw; ++p) {
    for (std::size_t k = 0; k < c; ++k) q[k] = f_query[k * qh * qw + p];
    T best = -std::numeric_limits<T>::infinity();
    for (const auto& s : sup) best = std::max(best, cosine(q, s, eps));
    out.values[p] = best;
  }
  const auto [lo, hi] = std::minmax_element(out.values.values().begin(), out.values.values().end());
  const T mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    out.values.fill(T{0});
    return out;
  }
  for (auto& v : out.values.values()) v = std::clamp((v - mn) / (mx - mn), T(0), T(1));
  return out;
}

/// Mean prior inside the ground-truth foreground minus mean outside.
template <typename T>
T fragility_score(const PriorMask<T>& prior, const Mask& gt) {
  require_shape(gt.shape(), prior.values.shape(), "fragility ground truth");
  T in{0}, out{0};
  std::size_t nin = 0, nout = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i]) {
      in += prior.values[i];
      ++nin;
    } else {
      out += prior.values[i];
      ++nout;
    }
  }
  require(nin > 0 && nout > 0, ErrorCode::DegenerateGT, "ground truth must contain both foreground and background");
  return in / static_cast<T>(nin) - out / static_cast<T>(nout);
}

// ---------------------------------------------------------------------------
// Differentiable counterparts used by the training graph.

namespace ag {

/// MAP of item n of x [N,C,H,W] under a mask already at (H,W) -> [C].
template <typename T>
Var<T> masked_average_pool(const Var<T>& x, std::size_t n, const Mask& m) {
  const auto& s = x.shape();
  require(s.size() == 4 && n < s[0] && m.shape() == Shape{s[2], s[3]}, ErrorCode::ShapeMismatch,
          "masked_average_pool: features " + shape_str(s) + ", mask " + shape_str(m.shape()));
  const std::size_t c = s[1], hw = s[2] * s[3];
  auto proto = fssuw::detail::masked_mean(x.value().data() + n * c * hw, c, m);
  const T inv = T(1) / static_cast<T>(count_nonzero(m));
  return make_result<T>(Tensor<T>({c}, std::move(proto)), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data() + n * c * hw;
    for (std::size_t k = 0; k < c; ++k) {
      const T gk = self.grad[k] * inv;
      for (std::size_t p = 0; p < hw; ++p)
        if (m[p]) g[k * hw + p] += gk;
    }
  });
}

/// Cosine of every pixel of item n of x [N,C,H,W] against proto [C] -> [H,W].
template <typename T>
Var<T> cosine_map(const Var<T>& x, std::size_t n, const Var<T>& proto, T eps = T(kCosineEps)) {
  const auto& s = x.shape();
  require(s.size() == 4 && n < s[0] && proto.shape() == Shape{s[1]}, ErrorCode::ShapeMismatch,
          "cosine_map: features " + shape_str(s) + ", prototype " + shape_str(proto.shape()));
  const std::size_t c = s[1], h = s[2], w = s[3], hw = h * w;
  Tensor<T> out({h, w});
  const T* f = x.value().data() + n * c * hw;
  const T* v = proto.value().data();
  const T vn_raw = fssuw::detail::vector_norm(v, c, 1);
  const T vn = std::max(vn_raw, eps);
  std::vector<T> fnorm(hw), dots(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    T dot{0}, sq{0};
    for (std::size_t k = 0; k < c; ++k) {
      dot += f[k * hw + p] * v[k];
      sq += f[k * hw + p] * f[k * hw + p];
    }
    fnorm[p] = std::sqrt(sq);
    dots[p] = dot;
    out[p] = dot / (std::max(fnorm[p], eps) * vn);
  }
  return make_result<T>(std::move(out), {x, proto}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pv = self.parents[1];
    const T* fx = px->value.data() + n * c * hw;
    const T* vv = pv->value.data();
    const bool v_active = vn_raw > eps;
    T* gx = px->requires_grad ? px->grad_buffer().data() + n * c * hw : nullptr;
    T* gv = pv->requires_grad ? pv->grad_buffer().data() : nullptr;
    for (std::size_t p = 0; p < hw; ++p) {
      const T go = self.grad[p];
      if (go == T{0}) continue;
      const T un = std::max(fnorm[p], eps);
      const bool u_active = fnorm[p] > eps;
      const T cosv = dots[p] / (un * vn);
      const T base = go / (un * vn);
      for (std::size_t k = 0; k < c; ++k) {
        const T fk = fx[k * hw + p];
        if (gx) gx[k * hw + p] += base * vv[k] - (u_active ? go * cosv * fk / (un * un) : T{0});
        if (gv) gv[k] += base * fk - (v_active ? go * cosv * vv[k] / (vn * vn) : T{0});
      }
    }
  });
}

/// Stack (bg, fg) score maps [H,W] into temperature-scaled logits [2,H,W].
template <typename T>
Var<T> two_channel_logits(const Var<T>& bg, const Var<T>& fg, T temperature) {
  require_shape(fg.shape(), bg.shape(), "score maps");
  const std::size_t hw = bg.value().size();
  Tensor<T> out({2, bg.shape()[0], bg.shape()[1]});
  for (std::size_t i = 0; i < hw; ++i) {
    out[i] = temperature * bg.value()[i];
    out[hw + i] = temperature * fg.value()[i];
  }
  return make_result<T>(std::move(out), {bg, fg}, [=](Node<T>& self) {
    for (std::size_t ch = 0; ch < 2; ++ch) {
      auto& p = self.parents[ch];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < hw; ++i) g[i] += temperature * self.grad[ch * hw + i];
    }
  });
}

}  // namespace ag

}  // namespace fssuw
