#pragma once

// Minimal reverse-mode differentiation over NHWC tensors. Every op records a
// closure that scatters its output gradient into its parents; `backward`
// replays the closures in reverse topological order.

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "roiedit/tensor.hpp"

namespace roiedit::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

template <typename T>
Var<T> scalar(T v) {
  return constant(Tensor<T>({1}, v));
}

namespace detail {

template <typename T>
Var<T> make(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (!grad_enabled()) return n;
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  int n, h, w, cin, k, stride, pad, ho, wo;
  int rows() const { return n * ho * wo; }
  int cols() const { return k * k * cin; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int ccols = g.cols();
  for (int b = 0; b < g.n; ++b) {
    for (int oy = 0; oy < g.ho; ++oy) {
      for (int ox = 0; ox < g.wo; ++ox) {
        T* row = cols + (static_cast<std::size_t>((b * g.ho + oy) * g.wo + ox)) * ccols;
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            T* dst = row + (ky * g.k + kx) * g.cin;
            if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
              std::fill(dst, dst + g.cin, T(0));
            } else {
              const T* src = x + ((static_cast<std::size_t>(b) * g.h + iy) * g.w + ix) * g.cin;
              std::memcpy(dst, src, sizeof(T) * g.cin);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const int ccols = g.cols();
  for (int b = 0; b < g.n; ++b) {
    for (int oy = 0; oy < g.ho; ++oy) {
      for (int ox = 0; ox < g.wo; ++ox) {
        const T* row = cols + (static_cast<std::size_t>((b * g.ho + oy) * g.wo + ox)) * ccols;
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            const T* src = row + (ky * g.k + kx) * g.cin;
            T* dst = dx + ((static_cast<std::size_t>(b) * g.h + iy) * g.w + ix) * g.cin;
            for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D df) {
  Tensor<T> out(a->value.shape());
  const auto& in = a->value;
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make<T>(std::move(out), {a}, [a, df](Node<T>& self) {
    if (!a->requires_grad) return;
    auto& ga = a->grad_buffer();
    const auto& in = a->value;
    for (std::size_t i = 0; i < in.size(); ++i) ga[i] += self.grad[i] * df(in[i], self.value[i]);
  });
}

}  // namespace detail

/// Reverse pass from a scalar root. Gradients accumulate into every reachable
/// node that requires them.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root->requires_grad) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return detail::make<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    for (const auto* p : {&a, &b}) {
      if (!(*p)->requires_grad) continue;
      auto& g = (*p)->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return detail::make<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  return detail::unary<T>(a, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  return detail::unary<T>(
      a, [slope](T v) { return v > 0 ? v : slope * v; }, [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

/// Tangent of leaky_relu: t scaled by the slope leaky_relu has at `pre`.
/// Gradient flows to t only.
template <typename T>
Var<T> leaky_relu_tangent(const Var<T>& t, const Tensor<T>& pre, T slope = T(0.2)) {
  require_same_shape(t->value, pre, "leaky_relu_tangent");
  Tensor<T> out = t->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pre[i] > 0 ? T(1) : slope;
  return detail::make<T>(std::move(out), {t}, [t, pre, slope](Node<T>& self) {
    if (!t->requires_grad) return;
    auto& g = t->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (pre[i] > 0 ? T(1) : slope);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary<T>(a, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// softplus(v) = ln(1 + e^v), evaluated without overflow.
template <typename T>
T softplus_value(T v) {
  return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <typename T>
T sigmoid_value(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return detail::unary<T>(a, [](T v) { return softplus_value(v); }, [](T v, T) { return sigmoid_value(v); });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Var<T> mean(const Var<T>& a) {
  const auto n = a->value.size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a->value[i];
  return detail::make<T>(Tensor<T>({1}, s / static_cast<T>(n)), {a}, [a, n](Node<T>& self) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buffer();
    const T d = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += d;
  });
}

/// Mean absolute difference; the gradient of |0| is taken as 0.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "mean_abs_diff");
  const auto n = a->value.size();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a->value[i] - b->value[i]);
  return detail::make<T>(Tensor<T>({1}, s / static_cast<T>(n)), {a, b}, [a, b, n](Node<T>& self) {
    const T d = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = a->value[i] - b->value[i];
      const T sgn = diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0));
      if (a->requires_grad) a->grad_buffer()[i] += d * sgn;
      if (b->requires_grad) b->grad_buffer()[i] -= d * sgn;
    }
  });
}

/// Weighted sum of scalar nodes.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    s += weights[i] * terms[i]->value[0];
  }
  return detail::make<T>(Tensor<T>({1}, s), terms, [terms, weights](Node<T>& self) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (terms[i]->requires_grad) terms[i]->grad_buffer()[0] += weights[i] * self.grad[0];
    }
  });
}

// ---- layers ----------------------------------------------------------------

/// 2D convolution, NHWC input, weight (K, K, Cin, Cout), bias (Cout), zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != ws[1] || ws[2] != xs[3] || b->value.size() != static_cast<std::size_t>(ws[3])) {
    throw ShapeError("conv2d: input " + shape_string(xs) + " incompatible with weight " + shape_string(ws));
  }
  detail::ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d: empty output for input " + shape_string(xs));
  const int cout = ws[3];
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(g.rows()) * g.cols());
  detail::im2col(x->value.data(), g, cols->data());
  Tensor<T> out({g.n, g.ho, g.wo, cout});
  detail::CMapMat<T> cm(cols->data(), g.rows(), g.cols());
  detail::CMapMat<T> wm(w->value.data(), g.cols(), cout);
  detail::MapMat<T> om(out.data(), g.rows(), cout);
  om.noalias() = cm * wm;
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(b->value.data(), cout);
  om.rowwise() += bv;
  return detail::make<T>(std::move(out), {x, w, b}, [x, w, b, g, cout, cols](Node<T>& self) {
    detail::CMapMat<T> gm(self.grad.data(), g.rows(), cout);
    detail::CMapMat<T> cm(cols->data(), g.rows(), g.cols());
    if (w->requires_grad) {
      detail::MapMat<T> gw(w->grad_buffer().data(), g.cols(), cout);
      gw.noalias() += cm.transpose() * gm;
    }
    if (b->requires_grad) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(b->grad_buffer().data(), cout);
      gb += gm.colwise().sum();
    }
    if (x->requires_grad) {
      detail::CMapMat<T> wm(w->value.data(), g.cols(), cout);
      detail::RowMat<T> dcols = gm * wm.transpose();
      detail::col2im_add(dcols.data(), g, x->grad_buffer().data());
    }
  });
}

/// Nearest-neighbour 2x spatial upsampling of an NHWC tensor.
template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw ShapeError("upsample2x expects NHWC");
  const int n = s[0], h = s[1], w = s[2], c = s[3];
  Tensor<T> out({n, 2 * h, 2 * w, c});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        std::memcpy(&out.at(b, y, xx, 0), &x->value.at(b, y / 2, xx / 2, 0), sizeof(T) * c);
  return detail::make<T>(std::move(out), {x}, [x, n, h, w, c](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          for (int k = 0; k < c; ++k) g.at(b, y / 2, xx / 2, k) += self.grad.at(b, y, xx, k);
  });
}

/// x (N, D) times w (D, O) plus bias (O).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0] || b->value.size() != static_cast<std::size_t>(ws[1])) {
    throw ShapeError("linear: input " + shape_string(xs) + " incompatible with weight " + shape_string(ws));
  }
  const int n = xs[0], d = xs[1], o = ws[1];
  Tensor<T> out({n, o});
  detail::MapMat<T> om(out.data(), n, o);
  om.noalias() = detail::CMapMat<T>(x->value.data(), n, d) * detail::CMapMat<T>(w->value.data(), d, o);
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b->value.data(), o);
  return detail::make<T>(std::move(out), {x, w, b}, [x, w, b, n, d, o](Node<T>& self) {
    detail::CMapMat<T> gm(self.grad.data(), n, o);
    if (w->requires_grad) {
      detail::MapMat<T>(w->grad_buffer().data(), d, o).noalias() +=
          detail::CMapMat<T>(x->value.data(), n, d).transpose() * gm;
    }
    if (b->requires_grad) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(b->grad_buffer().data(), o) += gm.colwise().sum();
    }
    if (x->requires_grad) {
      detail::MapMat<T>(x->grad_buffer().data(), n, d).noalias() +=
          gm * detail::CMapMat<T>(w->value.data(), d, o).transpose();
    }
  });
}

/// y = x * (1 + scale) + shift with scale, shift of shape (N, C) broadcast over space.
template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& scale_, const Var<T>& shift) {
  const auto& s = x->value.shape();
  if (s.size() != 4 || scale_->value.shape() != std::vector<int>{s[0], s[3]} ||
      shift->value.shape() != scale_->value.shape()) {
    throw ShapeError("modulate: feature " + shape_string(s) + " vs style " + shape_string(scale_->value.shape()));
  }
  const int n = s[0], hw = s[1] * s[2], c = s[3];
  Tensor<T> out(s);
  for (int b = 0; b < n; ++b)
    for (int p = 0; p < hw; ++p)
      for (int k = 0; k < c; ++k) {
        const std::size_t i = (static_cast<std::size_t>(b) * hw + p) * c + k;
        out[i] = x->value[i] * (T(1) + scale_->value[b * c + k]) + shift->value[b * c + k];
      }
  return detail::make<T>(std::move(out), {x, scale_, shift}, [x, scale_, shift, n, hw, c](Node<T>& self) {
    for (int b = 0; b < n; ++b)
      for (int p = 0; p < hw; ++p)
        for (int k = 0; k < c; ++k) {
          const std::size_t i = (static_cast<std::size_t>(b) * hw + p) * c + k;
          const T g = self.grad[i];
          if (x->requires_grad) x->grad_buffer()[i] += g * (T(1) + scale_->value[b * c + k]);
          if (scale_->requires_grad) scale_->grad_buffer()[b * c + k] += g * x->value[i];
          if (shift->requires_grad) shift->grad_buffer()[b * c + k] += g;
        }
  });
}

/// Per-sample, per-channel normalization over space: (x - mean) / sqrt(var + eps).
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw ShapeError("instance_norm expects NHWC");
  const int n = s[0], hw = s[1] * s[2], c = s[3];
  Tensor<T> out(s);
  std::vector<T> inv_std(static_cast<std::size_t>(n) * c);
  for (int b = 0; b < n; ++b)
    for (int k = 0; k < c; ++k) {
      const std::size_t base = static_cast<std::size_t>(b) * hw * c + k;
      T mean = 0, var = 0;
      for (int p = 0; p < hw; ++p) mean += x->value[base + static_cast<std::size_t>(p) * c];
      mean /= T(hw);
      for (int p = 0; p < hw; ++p) {
        const T d = x->value[base + static_cast<std::size_t>(p) * c] - mean;
        var += d * d;
      }
      const T is = T(1) / std::sqrt(var / T(hw) + eps);
      inv_std[b * c + k] = is;
      for (int p = 0; p < hw; ++p) {
        const std::size_t i = base + static_cast<std::size_t>(p) * c;
        out[i] = (x->value[i] - mean) * is;
      }
    }
  return detail::make<T>(std::move(out), {x}, [x, inv_std = std::move(inv_std), n, hw, c](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < c; ++k) {
        const std::size_t base = static_cast<std::size_t>(b) * hw * c + k;
        T mg = 0, mgy = 0;
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = base + static_cast<std::size_t>(p) * c;
          mg += self.grad[i];
          mgy += self.grad[i] * self.value[i];
        }
        mg /= T(hw);
        mgy /= T(hw);
        const T is = inv_std[b * c + k];
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = base + static_cast<std::size_t>(p) * c;
          g[i] += is * (self.grad[i] - mg - self.value[i] * mgy);
        }
      }
  });
}

/// (N, H, W, C) -> (N, C)
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw ShapeError("global_avg_pool expects NHWC");
  const int n = s[0], hw = s[1] * s[2], c = s[3];
  Tensor<T> out({n, c});
  for (int b = 0; b < n; ++b)
    for (int p = 0; p < hw; ++p)
      for (int k = 0; k < c; ++k) out[b * c + k] += x->value[(static_cast<std::size_t>(b) * hw + p) * c + k];
  for (auto& v : out.values()) v /= static_cast<T>(hw);
  return detail::make<T>(std::move(out), {x}, [x, n, hw, c](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (int b = 0; b < n; ++b)
      for (int p = 0; p < hw; ++p)
        for (int k = 0; k < c; ++k)
          g[(static_cast<std::size_t>(b) * hw + p) * c + k] += self.grad[b * c + k] / static_cast<T>(hw);
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
  Tensor<T> out = x->value.reshaped(std::move(shape));
  return detail::make<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Zeroes every channel c (last axis) where keep[c] is false.
template <typename T>
Var<T> channel_mask(const Var<T>& x, const std::vector<bool>& keep) {
  const int c = x->value.dim(-1);
  if (static_cast<int>(keep.size()) != c) throw ShapeError("channel_mask: mask length != channel count");
  Tensor<T> out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!keep[i % c]) out[i] = T(0);
  return detail::make<T>(std::move(out), {x}, [x, keep, c](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (keep[i % c]) g[i] += self.grad[i];
  });
}

/// Concatenates along the leading (batch) axis.
template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  std::vector<int> shape = parts[0]->value.shape();
  int total = 0;
  for (const auto& p : parts) {
    auto s = p->value.shape();
    s[0] = shape[0];
    if (s != shape) throw ShapeError("concat_batch: trailing shapes differ");
    total += p->value.dim(0);
  }
  shape[0] = total;
  Tensor<T> out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.storage().begin(), p->value.storage().end(), out.storage().begin() + off);
    off += p->value.size();
  }
  return detail::make<T>(std::move(out), parts, [parts](Node<T>& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

/// Selects batch rows by index (indices may repeat).
template <typename T>
Var<T> gather_batch(const Var<T>& x, const std::vector<int>& index) {
  std::vector<int> shape = x->value.shape();
  const std::size_t stride = x->value.size() / static_cast<std::size_t>(shape[0]);
  for (int i : index)
    if (i < 0 || i >= shape[0]) throw ShapeError("gather_batch: index out of range");
  shape[0] = static_cast<int>(index.size());
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy_n(x->value.data() + index[r] * stride, stride, out.data() + r * stride);
  return detail::make<T>(std::move(out), {x}, [x, index, stride](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t i = 0; i < stride; ++i) g[index[r] * stride + i] += self.grad[r * stride + i];
  });
}

struct CropSpec {
  int batch;
  int y;
  int x;
};

/// Extracts square spatial crops of side `size`; output batch follows `specs`.
template <typename T>
Var<T> crops(const Var<T>& x, const std::vector<CropSpec>& specs, int size) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw ShapeError("crops expects NHWC");
  const int c = s[3];
  for (const auto& sp : specs) {
    if (sp.batch < 0 || sp.batch >= s[0] || sp.y < 0 || sp.x < 0 || sp.y + size > s[1] || sp.x + size > s[2]) {
      throw ShapeError("crops: crop window outside tensor " + shape_string(s));
    }
  }
  Tensor<T> out({static_cast<int>(specs.size()), size, size, c});
  for (std::size_t r = 0; r < specs.size(); ++r)
    for (int y = 0; y < size; ++y)
      std::copy_n(&x->value.at(specs[r].batch, specs[r].y + y, specs[r].x, 0), size * c,
                  &out.at(static_cast<int>(r), y, 0, 0));
  return detail::make<T>(std::move(out), {x}, [x, specs, size, c](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t r = 0; r < specs.size(); ++r)
      for (int y = 0; y < size; ++y)
        for (int i = 0; i < size * c; ++i)
          (&g.at(specs[r].batch, specs[r].y + y, specs[r].x, 0))[i] += (&self.grad.at(static_cast<int>(r), y, 0, 0))[i];
  });
}

/// (N*G, F) -> (N, F): mean over consecutive groups of G rows.
template <typename T>
Var<T> group_mean(const Var<T>& x, int group) {
  const auto& s = x->value.shape();
  if (s.size() != 2 || group < 1 || s[0] % group != 0) throw ShapeError("group_mean: bad grouping");
  const int n = s[0] / group, f = s[1];
  Tensor<T> out({n, f});
  for (int r = 0; r < s[0]; ++r)
    for (int k = 0; k < f; ++k) out[(r / group) * f + k] += x->value[r * f + k] / static_cast<T>(group);
  return detail::make<T>(std::move(out), {x}, [x, group, f](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (int r = 0; r < x->value.dim(0); ++r)
      for (int k = 0; k < f; ++k) g[r * f + k] += self.grad[(r / group) * f + k] / static_cast<T>(group);
  });
}

/// (N, A) ++ (N, B) -> (N, A + B)
template <typename T>
Var<T> concat_features(const Var<T>& a, const Var<T>& b) {
  const auto& as = a->value.shape();
  const auto& bs = b->value.shape();
  if (as.size() != 2 || bs.size() != 2 || as[0] != bs[0]) throw ShapeError("concat_features: shape mismatch");
  const int n = as[0], fa = as[1], fb = bs[1];
  Tensor<T> out({n, fa + fb});
  for (int r = 0; r < n; ++r) {
    std::copy_n(a->value.data() + r * fa, fa, out.data() + r * (fa + fb));
    std::copy_n(b->value.data() + r * fb, fb, out.data() + r * (fa + fb) + fa);
  }
  return detail::make<T>(std::move(out), {a, b}, [a, b, n, fa, fb](Node<T>& self) {
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < fa; ++k)
        if (a->requires_grad) a->grad_buffer()[r * fa + k] += self.grad[r * (fa + fb) + k];
      for (int k = 0; k < fb; ++k)
        if (b->requires_grad) b->grad_buffer()[r * fb + k] += self.grad[r * (fa + fb) + fa + k];
    }
  });
}

}  // namespace roiedit::ag
