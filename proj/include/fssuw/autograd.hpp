#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a shared handle to a graph node. Ops build new nodes whose backward
// closures push gradients into their parents. Parameters are long-lived leaf
// Vars; everything else is released when the last handle goes out of scope.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"

namespace fssuw::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape(), T{0});
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient after backward(); a zero tensor if nothing reached this node.
  Tensor<T> grad() const {
    if (node_->grad.size() != node_->value.size()) return Tensor<T>(node_->value.shape(), T{0});
    return node_->grad;
  }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T{0});
  }

  /// Scalar value of a single-element Var.
  T item() const { return node_->value[0]; }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> v) {
  return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> parents, std::function<void(Node<T>&)> bw) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
  if (node->requires_grad) {
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(bw);
  }
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& parents, std::function<void(Node<T>&)> bw) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
  if (node->requires_grad) {
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(bw);
  }
  return Var<T>(std::move(node));
}

/// Back-propagate from a scalar root with seed gradient 1.
template <typename T>
void backward(const Var<T>& root) {
  require(root.value().size() == 1, ErrorCode::ShapeMismatch, "backward root must be scalar");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
bool wants(const std::shared_ptr<Node<T>>& p) {
  return p->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t dilation = 1;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t k, const ConvGeometry& g) {
  const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(g.dilation * (k - 1) + 1);
  const std::ptrdiff_t v = static_cast<std::ptrdiff_t>(in + 2 * g.pad) - span;
  require(v >= 0, ErrorCode::ShapeMismatch, "convolution input smaller than kernel");
  return static_cast<std::size_t>(v) / g.stride + 1;
}

namespace detail {

template <typename T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k, const ConvGeometry& g,
            std::size_t oh, std::size_t ow, T* col) {
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ci * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* out = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* src = img + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, const ConvGeometry& g,
            std::size_t oh, std::size_t ow, T* img) {
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ci * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution. x [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require(xs.size() == 4 && ws.size() == 4 && ws[2] == ws[3], ErrorCode::ShapeMismatch,
          "conv2d expects x [N,C,H,W] and square kernel, got " + shape_str(xs) + " * " + shape_str(ws));
  require(xs[1] == ws[1], ErrorCode::ShapeMismatch,
          "conv2d channel mismatch: input " + shape_str(xs) + ", weight " + shape_str(ws));
  require(bias.shape() == Shape{ws[0]}, ErrorCode::ShapeMismatch, "conv2d bias shape");
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const std::size_t cout = ws[0], k = ws[2];
  const std::size_t oh = conv_out_size(h, k, g), ow = conv_out_size(w, k, g);
  const std::size_t rows = cin * k * k, cols = oh * ow;
  const bool pointwise = (k == 1 && g.stride == 1 && g.pad == 0);

  Tensor<T> out({n, cout, oh, ow});
  std::vector<T> col(pointwise ? 0 : rows * cols);
  detail::CMapMat<T> wm(weight.value().data(), cout, rows);
  for (std::size_t b = 0; b < n; ++b) {
    const T* img = x.value().data() + b * cin * h * w;
    if (!pointwise) detail::im2col(img, cin, h, w, k, g, oh, ow, col.data());
    detail::CMapMat<T> cm(pointwise ? img : col.data(), rows, cols);
    detail::MapMat<T> om(out.data() + b * cout * cols, cout, cols);
    om.noalias() = wm * cm;
    for (std::size_t co = 0; co < cout; ++co) om.row(static_cast<Eigen::Index>(co)).array() += bias.value()[co];
  }

  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    std::vector<T> colbuf(pointwise ? 0 : rows * cols);
    std::vector<T> dcol(rows * cols);
    detail::CMapMat<T> wmat(pw->value.data(), cout, rows);
    for (std::size_t b = 0; b < n; ++b) {
      detail::CMapMat<T> dout(self.grad.data() + b * cout * cols, cout, cols);
      const T* img = px->value.data() + b * cin * h * w;
      if (pw->requires_grad) {
        if (!pointwise) detail::im2col(img, cin, h, w, k, g, oh, ow, colbuf.data());
        detail::CMapMat<T> cm(pointwise ? img : colbuf.data(), rows, cols);
        detail::MapMat<T> dw(pw->grad_buffer().data(), cout, rows);
        dw.noalias() += dout * cm.transpose();
      }
      if (pb->requires_grad) {
        auto& db = pb->grad_buffer();
        // Plain loop: Eigen's vectorised sum splits on pointer alignment, which varies per allocation.
        for (std::size_t co = 0; co < cout; ++co) {
          const T* row = self.grad.data() + b * cout * cols + co * cols;
          T acc = T(0);
          for (std::size_t j = 0; j < cols; ++j) acc += row[j];
          db[co] += acc;
        }
      }
      if (px->requires_grad) {
        T* dimg = px->grad_buffer().data() + b * cin * h * w;
        if (pointwise) {
          detail::MapMat<T> dx(dimg, rows, cols);
          dx.noalias() += wmat.transpose() * dout;
        } else {
          detail::MapMat<T> dc(dcol.data(), rows, cols);
          dc.noalias() = wmat.transpose() * dout;
          detail::col2im(dcol.data(), cin, h, w, k, g, oh, ow, dimg);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Routing trace

/// Fingerprint of the piecewise-linear routing (active relu units, max-pool
/// winners) taken by ops evaluated while an instance is in scope. Two
/// evaluations with equal digests lie on the same smooth piece.
class RoutingTrace {
 public:
  RoutingTrace() : prev_(current()) { current() = this; }
  ~RoutingTrace() { current() = prev_; }
  RoutingTrace(const RoutingTrace&) = delete;
  RoutingTrace& operator=(const RoutingTrace&) = delete;

  std::uint64_t digest() const { return hash_.digest(); }

  static bool active() { return current() != nullptr; }

  template <typename U>
  static void record(const std::vector<U>& v) {
    if (auto* t = current()) t->hash_.update(v.data(), v.size() * sizeof(U));
  }

 private:
  static RoutingTrace*& current() {
    static thread_local RoutingTrace* top = nullptr;
    return top;
  }

  RoutingTrace* prev_;
  Fnv1a hash_;
};

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y = x.value();
  for (auto& v : y.values()) v = v > T{0} || std::isnan(v) ? v : T{0};  // NaN propagates
  if (RoutingTrace::active()) {
    std::vector<std::uint8_t> on(y.size());
    for (std::size_t i = 0; i < on.size(); ++i) on[i] = x.value()[i] > T{0};
    RoutingTrace::record(on);
  }
  return make_result<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->value[i] > T{0}) g[i] += self.grad[i];
  });
}

/// Exact GELU: x * Phi(x).
template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> y = x.value();
  for (auto& v : y.values()) v = gelu_value(v);
  return make_result<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gelu_derivative(p->value[i]);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "add");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.values()) v *= s;
  return make_result<T>(std::move(y), {a}, [s](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

/// Sum of scalar Vars.
template <typename T>
Var<T> sum_scalars(const std::vector<Var<T>>& xs) {
  T total{0};
  for (const auto& x : xs) total += x.item();
  return make_result<T>(Tensor<T>({1}, total), xs, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_buffer()[0] += self.grad[0];
  });
}

/// Element-wise mean of equal-shaped Vars.
template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), ErrorCode::InvalidArgument, "mean of nothing");
  Tensor<T> y(xs.front().shape(), T{0});
  for (const auto& x : xs) {
    require_shape(x.shape(), y.shape(), "mean_of");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x.value()[i];
  }
  const T inv = T(1) / static_cast<T>(xs.size());
  if (xs.size() > 1)
    for (auto& v : y.values()) v *= inv;
  return make_result<T>(std::move(y), xs, [inv](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling and resampling on [N,C,H,W]

/// 2x2 max pooling, stride 2, floor mode. Ties go to the first maximum in
/// row-major window order.
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() == 4, ErrorCode::ShapeMismatch, "max_pool2 expects [N,C,H,W]");
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor<T> y({s[0], s[1], oh, ow});
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.value().data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best] || std::isnan(src[idx])) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        y[o] = src[best];
        (*arg)[o] = p * h * w + best;
      }
    }
  }
  RoutingTrace::record(*arg);
  return make_result<T>(std::move(y), {x}, [arg](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < arg->size(); ++o) g[(*arg)[o]] += self.grad[o];
  });
}

/// k x k average pooling with stride k, floor mode.
template <typename T>
Var<T> avg_pool(const Var<T>& x, std::size_t k) {
  const auto& s = x.shape();
  require(s.size() == 4 && k >= 1, ErrorCode::ShapeMismatch, "avg_pool expects [N,C,H,W]");
  if (k == 1) return x;
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / k, ow = w / k;
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> y({s[0], s[1], oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.value().data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc{0};
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) acc += src[(oy * k + dy) * w + ox * k + dx];
        y[(p * oh + oy) * ow + ox] = acc * inv;
      }
  }
  return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T go = self.grad[(p * oh + oy) * ow + ox] * inv;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) g[p * h * w + (oy * k + dy) * w + ox * k + dx] += go;
        }
  });
}

/// Bilinear resize of the trailing two axes.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  const auto& s = x.shape();
  const std::size_t in_h = s[s.size() - 2], in_w = s[s.size() - 1];
  if (in_h == out_h && in_w == out_w) return x;
  Tensor<T> y = fssuw::resize_bilinear(x.value(), out_h, out_w);
  return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto th = bilinear_taps(in_h, out_h);
    const auto tw = bilinear_taps(in_w, out_w);
    const std::size_t planes = g.size() / (in_h * in_w);
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = g.data() + p * in_h * in_w;
      const T* src = self.grad.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& a = th[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tw[ox];
          const T go = src[oy * out_w + ox];
          dst[a.i0 * in_w + b.i0] += static_cast<T>(a.w0 * b.w0) * go;
          dst[a.i0 * in_w + b.i1] += static_cast<T>(a.w0 * b.w1) * go;
          dst[a.i1 * in_w + b.i0] += static_cast<T>(a.w1 * b.w0) * go;
          dst[a.i1 * in_w + b.i1] += static_cast<T>(a.w1 * b.w1) * go;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

/// Concatenate [N,Ci,H,W] tensors along channels.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), ErrorCode::InvalidArgument, "concat of nothing");
  if (xs.size() == 1) return xs.front();
  const auto& s0 = xs.front().shape();
  require(s0.size() == 4, ErrorCode::ShapeMismatch, "concat_channels expects [N,C,H,W]");
  std::size_t ctot = 0;
  std::vector<std::size_t> offsets;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3], ErrorCode::ShapeMismatch,
            "concat_channels: " + shape_str(s) + " vs " + shape_str(s0));
    offsets.push_back(ctot);
    ctot += s[1];
  }
  const std::size_t n = s0[0], plane = s0[2] * s0[3];
  Tensor<T> y({n, ctot, s0[2], s0[3]});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t ci = xs[i].shape()[1];
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(xs[i].value().data() + b * ci * plane, ci * plane, y.data() + (b * ctot + offsets[i]) * plane);
  }
  return make_result<T>(std::move(y), xs, [=](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = self.parents[i];
      if (!p->requires_grad) continue;
      const std::size_t ci = p->value.dim(1);
      auto& g = p->grad_buffer();
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = self.grad.data() + (b * ctot + offsets[i]) * plane;
        T* dst = g.data() + b * ci * plane;
        for (std::size_t j = 0; j < ci * plane; ++j) dst[j] += src[j];
      }
    }
  });
}

/// Items [first, first+count) along the leading axis.
template <typename T>
Var<T> slice_batch(const Var<T>& x, std::size_t first, std::size_t count) {
  const auto& s = x.shape();
  require(first + count <= s[0], ErrorCode::ShapeMismatch, "slice_batch out of range");
  const std::size_t item = x.value().size() / s[0];
  Shape os = s;
  os[0] = count;
  std::vector<T> data(x.value().data() + first * item, x.value().data() + (first + count) * item);
  return make_result<T>(Tensor<T>(os, std::move(data)), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t j = 0; j < count * item; ++j) g[first * item + j] += self.grad[j];
  });
}

/// Concatenate along the leading axis.
template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), ErrorCode::InvalidArgument, "concat of nothing");
  if (xs.size() == 1) return xs.front();
  Shape s = xs.front().shape();
  const std::size_t item = xs.front().value().size() / s[0];
  std::size_t total = 0;
  std::vector<T> data;
  for (const auto& x : xs) {
    Shape tail(x.shape().begin() + 1, x.shape().end());
    require(tail == Shape(s.begin() + 1, s.end()), ErrorCode::ShapeMismatch,
            "concat_batch: " + shape_str(x.shape()) + " vs " + shape_str(s));
    total += x.shape()[0];
    data.insert(data.end(), x.value().values().begin(), x.value().values().end());
  }
  s[0] = total;
  return make_result<T>(Tensor<T>(s, std::move(data)), xs, [item](Node<T>& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->value.dim(0) * item;
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t j = 0; j < len; ++j) g[j] += self.grad[off + j];
      }
      off += len;
    }
  });
}

}  // namespace fssuw::ag
