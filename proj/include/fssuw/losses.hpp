#pragma once

#include <cmath>
#include <vector>

#include "matching.hpp"

namespace fssuw {

inline constexpr double kDiceSmoothing = 1.0;

struct LossBreakdown {
  double ce = 0;
  double dice = 0;
  double mask_loss = 0;
  double align_loss = 0;
  double total = 0;
};

template <typename T>
struct MaskLoss {
  T value;
  T ce;
  T dice;
};

namespace detail {

inline void check_logits(const Shape& logits, const Mask& gt) {
  require(logits.size() == 3 && logits[0] == 2, ErrorCode::ShapeMismatch,
          "logits must be [2,H,W], got " + shape_str(logits));
  require(gt.shape() == Shape{logits[1], logits[2]}, ErrorCode::ShapeMismatch,
          "ground truth " + shape_str(gt.shape()) + " vs logits " + shape_str(logits));
}

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

/// Mean pixel-wise -log softmax(logits)[gt]. For two channels this is
/// softplus(other - chosen), which is the max-subtracted log-sum-exp.
template <typename T>
T cross_entropy(const Tensor<T>& logits, const Mask& gt) {
  detail::check_logits(logits.shape(), gt);
  const std::size_t hw = gt.size();
  T acc{0};
  for (std::size_t p = 0; p < hw; ++p) {
    const T bg = logits[p], fg = logits[hw + p];
    acc += gt[p] ? detail::softplus(bg - fg) : detail::softplus(fg - bg);
  }
  return acc / static_cast<T>(hw);
}

template <typename T>
Tensor<T> softmax_foreground(const Tensor<T>& logits) {
  require(logits.rank() == 3 && logits.dim(0) == 2, ErrorCode::ShapeMismatch, "logits must be [2,H,W]");
  const std::size_t hw = logits.dim(1) * logits.dim(2);
  Tensor<T> p({logits.dim(1), logits.dim(2)});
  for (std::size_t i = 0; i < hw; ++i) p[i] = detail::sigmoid(logits[hw + i] - logits[i]);
  return p;
}

/// Soft dice: 1 - (2 sum(p g) + s) / (sum p + sum g + s).
template <typename T>
T dice_loss(const Tensor<T>& probs, const Mask& gt, T smoothing = T(kDiceSmoothing)) {
  require_shape(gt.shape(), probs.shape(), "dice ground truth");
  T inter{0}, sp{0}, sg{0};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const T g = gt[i] ? T(1) : T(0);
    inter += probs[i] * g;
    sp += probs[i];
    sg += g;
  }
  return T(1) - (T(2) * inter + smoothing) / (sp + sg + smoothing);
}

template <typename T>
MaskLoss<T> mask_loss(const Tensor<T>& logits, const Mask& gt) {
  const T ce = cross_entropy(logits, gt);
  const T dice = dice_loss(softmax_foreground(logits), gt);
  return {ce + dice, ce, dice};
}

inline LossBreakdown total_loss(double ce, double dice, double align, bool align_enabled = true) {
  LossBreakdown b;
  b.ce = ce;
  b.dice = dice;
  b.mask_loss = ce + dice;
  b.align_loss = align_enabled ? align : 0.0;
  b.total = b.mask_loss + b.align_loss;
  return b;
}

namespace ag {

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const Mask& gt) {
  fssuw::detail::check_logits(logits.shape(), gt);
  const T value = fssuw::cross_entropy(logits.value(), gt);
  return make_result<T>(Tensor<T>({1}, value), {logits}, [gt](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const std::size_t hw = gt.size();
    const T scale = self.grad[0] / static_cast<T>(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      const T pf = fssuw::detail::sigmoid(p->value[hw + i] - p->value[i]);
      const T y = gt[i] ? T(1) : T(0);
      g[hw + i] += scale * (pf - y);
      g[i] += scale * (y - pf);
    }
  });
}

/// Foreground probability [H,W] from [2,H,W] logits.
template <typename T>
Var<T> softmax_foreground(const Var<T>& logits) {
  Tensor<T> p = fssuw::softmax_foreground(logits.value());
  Tensor<T> saved = p;
  return make_result<T>(std::move(p), {logits}, [saved](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const std::size_t hw = saved.size();
    for (std::size_t i = 0; i < hw; ++i) {
      const T d = self.grad[i] * saved[i] * (T(1) - saved[i]);
      g[hw + i] += d;
      g[i] -= d;
    }
  });
}

template <typename T>
Var<T> dice_loss(const Var<T>& probs, const Mask& gt, T smoothing = T(kDiceSmoothing)) {
  require_shape(gt.shape(), probs.shape(), "dice ground truth");
  T inter{0}, sp{0}, sg{0};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const T g = gt[i] ? T(1) : T(0);
    inter += probs.value()[i] * g;
    sp += probs.value()[i];
    sg += g;
  }
  const T num = T(2) * inter + smoothing, den = sp + sg + smoothing;
  return make_result<T>(Tensor<T>({1}, T(1) - num / den), {probs}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const T y = gt[i] ? T(1) : T(0);
      g[i] += self.grad[0] * (-(T(2) * y) / den + num / (den * den));
    }
  });
}

template <typename T>
struct MaskLossVars {
  Var<T> value;
  Var<T> ce;
  Var<T> dice;
};

template <typename T>
MaskLossVars<T> mask_loss(const Var<T>& logits, const Mask& gt) {
  auto ce = cross_entropy(logits, gt);
  auto dice = dice_loss(softmax_foreground(logits), gt);
  return {sum_scalars<T>({ce, dice}), ce, dice};
}

/// Prototype alignment: prototypes from the query features under the
/// predicted query mask segment each support, scored with the mask loss
/// against that support's ground truth and averaged over supports.
///
/// features: [K+1, C', H', W'] with supports first and the query last.
/// query_logits: low-resolution [2, H', W'] query logits (argmax only).
/// Returns an all-constant zero when the predicted mask has no foreground or
/// no background pixel.
template <typename T>
Var<T> align_loss(const Var<T>& features, const Tensor<T>& query_logits, const std::vector<Mask>& support_gts,
                  T temperature = T(kDefaultTemperature), T eps = T(kCosineEps),
                  std::vector<T>* per_support = nullptr) {
  const auto& s = features.shape();
  require(s.size() == 4 && s[0] == support_gts.size() + 1, ErrorCode::ShapeMismatch,
          "align_loss expects K+1 feature maps for K supports");
  const std::size_t k = support_gts.size(), q = k;
  const Mask pred = argmax_mask(query_logits);
  require(pred.shape() == Shape{s[2], s[3]}, ErrorCode::ShapeMismatch, "query logits not at feature resolution");
  const std::size_t fg_count = count_nonzero(pred);
  if (fg_count == 0 || fg_count == pred.size()) {
    if (per_support) per_support->assign(k, T{0});
    return constant(Tensor<T>({1}, T{0}));
  }
  auto fg = masked_average_pool(features, q, pred);
  auto bg = masked_average_pool(features, q, complement(pred));
  std::vector<Var<T>> losses;
  if (per_support) per_support->clear();
  for (std::size_t i = 0; i < k; ++i) {
    auto logits = two_channel_logits(cosine_map(features, i, bg, eps), cosine_map(features, i, fg, eps), temperature);
    logits = resize_bilinear(logits, support_gts[i].dim(0), support_gts[i].dim(1));
    auto l = mask_loss(logits, support_gts[i]).value;
    if (per_support) per_support->push_back(l.item());
    losses.push_back(l);
  }
  return mean_of(losses);
}

}  // namespace ag

/// Tensor-level alignment loss for K support feature maps and one query map.
template <typename T>
T align_loss(const std::vector<Tensor<T>>& f_supports, const Tensor<T>& f_query, const Tensor<T>& query_logits,
             const std::vector<Mask>& support_gts, T temperature = T(kDefaultTemperature),
             std::vector<T>* per_support = nullptr) {
  std::vector<Tensor<T>> all = f_supports;
  all.push_back(f_query);
  auto v = ag::align_loss(ag::constant(stack(all)), query_logits, support_gts, temperature, T(kCosineEps), per_support);
  return v.item();
}

}  // namespace fssuw
