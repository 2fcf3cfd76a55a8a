#include "bifrn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>

namespace bifrn::ops {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
void require_finite(const char* op, const std::vector<T>& values, const char* what) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite " + what);
    }
  }
}

template <typename T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> values,
                 std::initializer_list<NodePtr<T>> inputs, typename Tape<T>::BackwardFn fn) {
  require_finite(op, values, "output");
  bool track = false;
  if (NoGradGuard::grad_enabled()) {
    for (const auto& in : inputs) track = track || in->requires_grad;
  }
  Tensor<T> out(std::move(shape), std::move(values), track);
  if (track) Tape<T>::current().record(out.node(), std::move(fn));
  return out;
}

/// Gradient buffer of `n`, or nullptr when `n` does not take gradients.
template <typename T>
T* grad_of(const NodePtr<T>& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

template <typename T>
std::size_t last_dim(const Tensor<T>& a) {
  return a.shape().back();
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return finish<T>("add", a.shape(), std::move(out), {an, bn}, [an, bn](const TensorNode<T>& o) {
    const std::size_t n = o.grad.size();
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
    if (T* gb = grad_of(bn)) for (std::size_t i = 0; i < n; ++i) gb[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return finish<T>("sub", a.shape(), std::move(out), {an, bn}, [an, bn](const TensorNode<T>& o) {
    const std::size_t n = o.grad.size();
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
    if (T* gb = grad_of(bn)) for (std::size_t i = 0; i < n; ++i) gb[i] -= o.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return finish<T>("mul", a.shape(), std::move(out), {an, bn}, [an, bn](const TensorNode<T>& o) {
    const std::size_t n = o.grad.size();
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i] * bn->value[i];
    if (T* gb = grad_of(bn)) for (std::size_t i = 0; i < n; ++i) gb[i] += o.grad[i] * an->value[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  NodePtr<T> an = a.node();
  return finish<T>("scale", a.shape(), std::move(out), {an}, [an, factor](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: factor must hold one element, got " + shape_str(s.shape()));
  const T f = s.values()[0];
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * f;
  NodePtr<T> an = a.node(), sn = s.node();
  return finish<T>("mul_scalar", a.shape(), std::move(out), {an, sn}, [an, sn](const TensorNode<T>& o) {
    const T f = sn->value[0];
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * f;
    if (T* gs = grad_of(sn)) {
      T acc = 0;
      for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * an->value[i];
      gs[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  }
  const std::size_t period = y.numel();
  std::vector<T> out(x.numel());
  auto xv = x.values(), yv = y.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + yv[i % period];
  NodePtr<T> xn = x.node(), yn = y.node();
  return finish<T>("add_broadcast", xs, std::move(out), {xn, yn}, [xn, yn, period](const TensorNode<T>& o) {
    if (T* gx = grad_of(xn)) for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
    if (T* gy = grad_of(yn)) for (std::size_t i = 0; i < o.grad.size(); ++i) gy[i % period] += o.grad[i];
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  NodePtr<T> an = a.node();
  return finish<T>("exp", a.shape(), std::move(out), {an}, [an](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * o.value[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T{0} ? av[i] : T{0};
  NodePtr<T> an = a.node();
  return finish<T>("relu", a.shape(), std::move(out), {an}, [an](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        if (an->value[i] > T{0}) ga[i] += o.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  NodePtr<T> an = a.node();
  return finish<T>("reshape", std::move(shape), std::move(out), {an}, [an](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  NodePtr<T> an = a.node();
  return finish<T>("transpose", Shape{n, m}, std::move(out), {an}, [an, m, n](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += o.grad[j * m + i];
    }
  });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  require_rank("transpose_last2", a, 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), n = a.dim(2);
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[off + j * m + i] = av[off + i * n + j];
  }
  NodePtr<T> an = a.node();
  return finish<T>("transpose_last2", Shape{batch, n, m}, std::move(out), {an},
                   [an, batch, m, n](const TensorNode<T>& o) {
                     if (T* ga = grad_of(an)) {
                       for (std::size_t b = 0; b < batch; ++b) {
                         const std::size_t off = b * m * n;
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) ga[off + i * n + j] += o.grad[off + j * m + i];
                       }
                     }
                   });
}

namespace {

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ga[m,k] += g[m,n] * b[k,n]^T. Transposing b first keeps the inner loop a
// contiguous axpy instead of a dot-product reduction.
template <typename T>
void gemm_nt(const T* g, const T* b, T* ga, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(g, bt.data(), ga, m, n, k);
}

// gb[k,n] += a[m,k]^T * g[m,n]
template <typename T>
void gemm_tn(const T* a, const T* g, T* gb, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* gbrow = gb + p * n;
      for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T{0});
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  NodePtr<T> an = a.node(), bn = b.node();
  return finish<T>("matmul", Shape{m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) gemm_nt(o.grad.data(), bn->value.data(), ga, m, k, n);
    if (T* gb = grad_of(bn)) gemm_tn(an->value.data(), o.grad.data(), gb, m, k, n);
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw DimensionError("bmm: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(batch * m * n, T{0});
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_nn(a.values().data() + i * m * k, b.values().data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  NodePtr<T> an = a.node(), bn = b.node();
  return finish<T>("bmm", Shape{batch, m, n}, std::move(out), {an, bn},
                   [an, bn, batch, m, k, n](const TensorNode<T>& o) {
                     T* ga = grad_of(an);
                     T* gb = grad_of(bn);
                     for (std::size_t i = 0; i < batch; ++i) {
                       const T* g = o.grad.data() + i * m * n;
                       if (ga) gemm_nt(g, bn->value.data() + i * k * n, ga + i * m * k, m, k, n);
                       if (gb) gemm_tn(an->value.data() + i * m * k, g, gb + i * k * n, m, k, n);
                     }
                   });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_finite("softmax_rows", x.node()->value, "input");
  const std::size_t n = last_dim(x), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  NodePtr<T> xn = x.node();
  return finish<T>("softmax_rows", x.shape(), std::move(out), {xn}, [xn, n, rows](const TensorNode<T>& o) {
    T* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.value.data() + r * n;
      const T* g = o.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  require_finite("log_softmax_rows", x.node()->value, "input");
  const std::size_t n = last_dim(x), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) y[j] = in[j] - lse;
  }
  NodePtr<T> xn = x.node();
  return finish<T>("log_softmax_rows", x.shape(), std::move(out), {xn}, [xn, n, rows](const TensorNode<T>& o) {
    T* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.value.data() + r * n;
      const T* g = o.grad.data() + r * n;
      T gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

namespace {

// Standardise `count` groups of `n` values each. Group g, element j lives at
// base(g) + j * stride. Returns the per-group 1/sqrt(var + eps).
template <typename T, typename Index>
std::vector<T> standardise(const T* x, T* xhat, std::size_t groups, std::size_t n, T eps, Index index) {
  std::vector<T> inv(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += x[index(g, j)];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T d = x[index(g, j)] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    inv[g] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat[index(g, j)] = (x[index(g, j)] - mu) * inv[g];
  }
  return inv;
}

// dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) per group.
template <typename T, typename Index>
void standardise_backward(const T* xhat, const T* dxhat, const std::vector<T>& inv, T* gx,
                          std::size_t groups, std::size_t n, Index index) {
  for (std::size_t g = 0; g < groups; ++g) {
    T m1 = 0, m2 = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = index(g, j);
      m1 += dxhat[i];
      m2 += dxhat[i] * xhat[i];
    }
    m1 /= static_cast<T>(n);
    m2 /= static_cast<T>(n);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = index(g, j);
      gx[i] += inv[g] * (dxhat[i] - m1 - xhat[i] * m2);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = last_dim(x);
  if (d < 2) throw DimensionError("layer_norm: feature width must be >= 2, got " + std::to_string(d));
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " elements");
  }
  const std::size_t rows = x.numel() / d;
  auto index = [d](std::size_t g, std::size_t j) { return g * d + j; };
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv = std::make_shared<std::vector<T>>(standardise(x.values().data(), xhat->data(), rows, d, eps, index));
  std::vector<T> out(x.numel());
  auto gv = gain.values(), bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (*xhat)[r * d + j] * gv[j] + bv[j];
  NodePtr<T> xn = x.node(), gn = gain.node(), bn = bias.node();
  return finish<T>("layer_norm", x.shape(), std::move(out), {xn, gn, bn},
                   [xn, gn, bn, xhat, inv, rows, d, index](const TensorNode<T>& o) {
                     if (T* gg = grad_of(gn)) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) gg[j] += o.grad[r * d + j] * (*xhat)[r * d + j];
                     }
                     if (T* gb = grad_of(bn)) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) gb[j] += o.grad[r * d + j];
                     }
                     if (T* gx = grad_of(xn)) {
                       std::vector<T> dxhat(o.grad.size());
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) dxhat[r * d + j] = o.grad[r * d + j] * gn->value[j];
                       standardise_backward(xhat->data(), dxhat.data(), *inv, gx, rows, d, index);
                     }
                   });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.values()) acc += v;
  NodePtr<T> an = a.node();
  return finish<T>("sum", Shape{1}, std::vector<T>{acc}, {an}, [an](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sq_l2(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.values()) acc += v * v;
  NodePtr<T> an = a.node();
  return finish<T>("sq_l2", Shape{1}, std::vector<T>{acc}, {an}, [an](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) {
      for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += T{2} * an->value[i] * o.grad[0];
    }
  });
}

template <typename T>
Tensor<T> block_sum(const Tensor<T>& a, std::size_t rows_per_block) {
  const std::size_t lead = a.dim(0);
  if (rows_per_block == 0 || lead % rows_per_block != 0) {
    throw DimensionError("block_sum: " + std::to_string(lead) + " rows not divisible by " +
                         std::to_string(rows_per_block));
  }
  const std::size_t blocks = lead / rows_per_block;
  const std::size_t span = a.numel() / blocks;
  std::vector<T> out(blocks, T{0});
  auto av = a.values();
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < span; ++i) out[b] += av[b * span + i];
  NodePtr<T> an = a.node();
  return finish<T>("block_sum", Shape{blocks}, std::move(out), {an}, [an, blocks, span](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) {
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < span; ++i) ga[b * span + i] += o.grad[b];
    }
  });
}

template <typename T>
Tensor<T> mean_row_blocks(const Tensor<T>& a, std::size_t rows_per_block) {
  require_rank("mean_row_blocks", a, 2);
  const std::size_t n = a.dim(0), m = a.dim(1);
  if (rows_per_block == 0 || n % rows_per_block != 0) {
    throw DimensionError("mean_row_blocks: " + std::to_string(n) + " rows not divisible by " +
                         std::to_string(rows_per_block));
  }
  const std::size_t blocks = n / rows_per_block;
  const T w = T{1} / static_cast<T>(rows_per_block);
  std::vector<T> out(blocks * m, T{0});
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[(i / rows_per_block) * m + j] += av[i * m + j] * w;
  NodePtr<T> an = a.node();
  return finish<T>("mean_row_blocks", Shape{blocks, m}, std::move(out), {an},
                   [an, n, m, rows_per_block, w](const TensorNode<T>& o) {
                     if (T* ga = grad_of(an)) {
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += o.grad[(i / rows_per_block) * m + j] * w;
                     }
                   });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  const std::size_t lead = a.dim(0);
  if (count == 0 || begin + count > lead) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t row = a.numel() / lead;
  Shape shape = a.shape();
  shape[0] = count;
  auto av = a.values();
  std::vector<T> out(av.begin() + begin * row, av.begin() + (begin + count) * row);
  NodePtr<T> an = a.node();
  const std::size_t offset = begin * row;
  return finish<T>("slice_rows", std::move(shape), std::move(out), {an}, [an, offset](const TensorNode<T>& o) {
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < o.grad.size(); ++i) ga[offset + i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("stack_rows: nothing to stack");
  const std::size_t n = parts.front().numel();
  std::vector<T> out;
  out.reserve(parts.size() * n);
  bool track = false;
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    if (p.numel() != n) throw DimensionError("stack_rows: parts differ in size");
    out.insert(out.end(), p.values().begin(), p.values().end());
    nodes.push_back(p.node());
    track = track || p.requires_grad();
  }
  require_finite("stack_rows", out, "output");
  track = track && NoGradGuard::grad_enabled();
  Tensor<T> result(Shape{parts.size(), n}, std::move(out), track);
  if (track) {
    Tape<T>::current().record(result.node(), [nodes, n](const TensorNode<T>& o) {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (T* g = grad_of(nodes[k])) for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[k * n + i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> pairwise_sq_dist(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("pairwise_sq_dist", a, 2);
  require_rank("pairwise_sq_dist", b, 2);
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) throw DimensionError("pairwise_sq_dist: widths differ");
  std::vector<T> out(n * m);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = av[i * d + k] - bv[j * d + k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  NodePtr<T> an = a.node(), bn = b.node();
  return finish<T>("pairwise_sq_dist", Shape{n, m}, std::move(out), {an, bn}, [an, bn, n, m, d](const TensorNode<T>& o) {
    T* ga = grad_of(an);
    T* gb = grad_of(bn);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const T g2 = T{2} * o.grad[i * m + j];
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = an->value[i * d + k] - bn->value[j * d + k];
          if (ga) ga[i * d + k] += g2 * diff;
          if (gb) gb[j * d + k] -= g2 * diff;
        }
      }
  });
}

template <typename T>
Tensor<T> nll(const Tensor<T>& logp, const std::vector<std::size_t>& labels) {
  require_rank("nll", logp, 2);
  const std::size_t n = logp.dim(0), c = logp.dim(1);
  if (labels.size() != n) throw ContractError("nll: expected " + std::to_string(n) + " labels");
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw ContractError("nll: label " + std::to_string(labels[i]) + " out of range for " + std::to_string(c) +
                          " classes");
    }
    acc -= logp.values()[i * c + labels[i]];
  }
  acc /= static_cast<T>(n);
  NodePtr<T> ln = logp.node();
  return finish<T>("nll", Shape{1}, std::vector<T>{acc}, {ln}, [ln, labels, n, c](const TensorNode<T>& o) {
    if (T* g = grad_of(ln)) {
      for (std::size_t i = 0; i < n; ++i) g[i * c + labels[i]] -= o.grad[0] / static_cast<T>(n);
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != Ci || weight.dim(3) != k) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (bias.numel() != Co) throw DimensionError("conv2d: bias must have " + std::to_string(Co) + " elements");
  if (H + 2 * pad < k || W + 2 * pad < k) throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;

  // Walks every (output pixel, input pixel, weight) triple that contributes.
  auto visit = [=](auto&& fn) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t widx = ((co * Ci + ci) * k + ky) * k + kx;
              const std::size_t x_lo = kx < pad ? pad - kx : 0;
              const std::size_t x_hi = std::min(Wo, W + pad - kx);
              if (x_lo >= x_hi) continue;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                const std::size_t obase = ((n * Co + co) * Ho + oy) * Wo;
                const std::size_t ibase = ((n * Ci + ci) * H + static_cast<std::size_t>(iy)) * W + kx - pad;
                fn(widx, obase, ibase, x_lo, x_hi);
              }
            }
  };

  std::vector<T> out(N * Co * Ho * Wo);
  auto bv = bias.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      std::fill_n(out.begin() + ((n * Co + co) * Ho * Wo), Ho * Wo, bv[co]);
  const T* xv = x.values().data();
  const T* wv = weight.values().data();
  // ibase may "underflow" by pad - kx; x_lo compensates so the sum stays in range.
  visit([&](std::size_t widx, std::size_t obase, std::size_t ibase, std::size_t lo, std::size_t hi) {
    const T w = wv[widx];
    for (std::size_t ox = lo; ox < hi; ++ox) out[obase + ox] += w * xv[ibase + ox];
  });

  NodePtr<T> xn = x.node(), wn = weight.node(), bn = bias.node();
  return finish<T>("conv2d", Shape{N, Co, Ho, Wo}, std::move(out), {xn, wn, bn},
                   [xn, wn, bn, visit, N, Co, Ho, Wo](const TensorNode<T>& o) {
                     T* gx = grad_of(xn);
                     T* gw = grad_of(wn);
                     if (T* gb = grad_of(bn)) {
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t co = 0; co < Co; ++co) {
                           const T* g = o.grad.data() + (n * Co + co) * Ho * Wo;
                           T acc = 0;
                           for (std::size_t i = 0; i < Ho * Wo; ++i) acc += g[i];
                           gb[co] += acc;
                         }
                     }
                     if (!gx && !gw) return;
                     const T* xv = xn->value.data();
                     const T* wv = wn->value.data();
                     visit([&](std::size_t widx, std::size_t obase, std::size_t ibase, std::size_t lo, std::size_t hi) {
                       const T* g = o.grad.data() + obase;
                       if (gx) {
                         const T w = wv[widx];
                         for (std::size_t ox = lo; ox < hi; ++ox) gx[ibase + ox] += w * g[ox];
                       }
                       if (gw) {
                         T acc = 0;
                         for (std::size_t ox = lo; ox < hi; ++ox) acc += g[ox] * xv[ibase + ox];
                         gw[widx] += acc;
                       }
                     });
                   });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window) {
  require_rank("max_pool2d", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window == 0 || H < window || W < window) throw DimensionError("max_pool2d: window larger than input");
  const std::size_t Ho = H / window, Wo = W / window;
  std::vector<T> out(N * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto xv = x.values();
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = p * H * W + (oy * window) * W + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t i = p * H * W + (oy * window + dy) * W + ox * window + dx;
            if (xv[i] > xv[best]) best = i;
          }
        const std::size_t o = (p * Ho + oy) * Wo + ox;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
  NodePtr<T> xn = x.node();
  return finish<T>("max_pool2d", Shape{N, C, Ho, Wo}, std::move(out), {xn}, [xn, argmax](const TensorNode<T>& o) {
    if (T* gx = grad_of(xn)) for (std::size_t i = 0; i < o.grad.size(); ++i) gx[(*argmax)[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, T momentum, T eps) {
  require_rank("batch_norm2d", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gain.numel() != C || bias.numel() != C || running_mean.numel() != C || running_var.numel() != C) {
    throw DimensionError("batch_norm2d: per-channel tensors must have " + std::to_string(C) + " elements");
  }
  const std::size_t count = N * HW;
  auto index = [C, HW](std::size_t c, std::size_t j) { return ((j / HW) * C + c) * HW + j % HW; };
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv = std::make_shared<std::vector<T>>(C);
  const T* xv = x.values().data();
  if (training) {
    *inv = standardise(xv, xhat->data(), C, count, eps, index);
    auto rm = running_mean.mutable_values();
    auto rv = running_var.mutable_values();
    for (std::size_t c = 0; c < C; ++c) {
      T mu = 0;
      for (std::size_t j = 0; j < count; ++j) mu += xv[index(c, j)];
      mu /= static_cast<T>(count);
      T var = 0;
      for (std::size_t j = 0; j < count; ++j) var += (xv[index(c, j)] - mu) * (xv[index(c, j)] - mu);
      var /= static_cast<T>(count > 1 ? count - 1 : 1);
      rm[c] = (T{1} - momentum) * rm[c] + momentum * mu;
      rv[c] = (T{1} - momentum) * rv[c] + momentum * var;
    }
  } else {
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (std::size_t c = 0; c < C; ++c) {
      (*inv)[c] = T{1} / std::sqrt(rv[c] + eps);
      for (std::size_t j = 0; j < count; ++j) (*xhat)[index(c, j)] = (xv[index(c, j)] - rm[c]) * (*inv)[c];
    }
  }
  std::vector<T> out(x.numel());
  auto gv = gain.values(), bv = bias.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < count; ++j) out[index(c, j)] = (*xhat)[index(c, j)] * gv[c] + bv[c];
  NodePtr<T> xn = x.node(), gn = gain.node(), bn = bias.node();
  return finish<T>("batch_norm2d", x.shape(), std::move(out), {xn, gn, bn},
                   [xn, gn, bn, xhat, inv, training, C, count, index](const TensorNode<T>& o) {
                     if (T* gg = grad_of(gn)) {
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t j = 0; j < count; ++j) gg[c] += o.grad[index(c, j)] * (*xhat)[index(c, j)];
                     }
                     if (T* gb = grad_of(bn)) {
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t j = 0; j < count; ++j) gb[c] += o.grad[index(c, j)];
                     }
                     T* gx = grad_of(xn);
                     if (!gx) return;
                     std::vector<T> dxhat(o.grad.size());
                     for (std::size_t c = 0; c < C; ++c)
                       for (std::size_t j = 0; j < count; ++j)
                         dxhat[index(c, j)] = o.grad[index(c, j)] * gn->value[c];
                     if (training) {
                       standardise_backward(xhat->data(), dxhat.data(), *inv, gx, C, count, index);
                     } else {
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t j = 0; j < count; ++j) gx[index(c, j)] += dxhat[index(c, j)] * (*inv)[c];
                     }
                   });
}

template <typename T>
Tensor<T> to_local_rows(const Tensor<T>& x) {
  require_rank("to_local_rows", x, 4);
  const std::size_t N = x.dim(0), d = x.dim(1), r = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < r; ++j) out[(n * r + j) * d + c] = xv[(n * d + c) * r + j];
  NodePtr<T> xn = x.node();
  return finish<T>("to_local_rows", Shape{N * r, d}, std::move(out), {xn}, [xn, N, d, r](const TensorNode<T>& o) {
    if (T* gx = grad_of(xn)) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < d; ++c)
          for (std::size_t j = 0; j < r; ++j) gx[(n * d + c) * r + j] += o.grad[(n * r + j) * d + c];
    }
  });
}

template <typename T>
Tensor<T> from_local_rows(const Tensor<T>& rows, std::size_t h, std::size_t w) {
  require_rank("from_local_rows", rows, 2);
  const std::size_t r = h * w, d = rows.dim(1);
  if (r == 0 || rows.dim(0) % r != 0) throw DimensionError("from_local_rows: row count not a multiple of h*w");
  const std::size_t N = rows.dim(0) / r;
  std::vector<T> out(rows.numel());
  auto rv = rows.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < r; ++j) out[(n * d + c) * r + j] = rv[(n * r + j) * d + c];
  NodePtr<T> rn = rows.node();
  return finish<T>("from_local_rows", Shape{N, d, h, w}, std::move(out), {rn}, [rn, N, d, r](const TensorNode<T>& o) {
    if (T* g = grad_of(rn)) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < d; ++c)
          for (std::size_t j = 0; j < r; ++j) g[(n * r + j) * d + c] += o.grad[(n * d + c) * r + j];
    }
  });
}

#define BIFRN_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                            \
  template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> exp(const Tensor<T>&);                                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
  template Tensor<T> transpose(const Tensor<T>&);                                                           \
  template Tensor<T> transpose_last2(const Tensor<T>&);                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                        \
  template Tensor<T> log_softmax_rows(const Tensor<T>&);                                                    \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> sum(const Tensor<T>&);                                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                                \
  template Tensor<T> sq_l2(const Tensor<T>&);                                                               \
  template Tensor<T> block_sum(const Tensor<T>&, std::size_t);                                              \
  template Tensor<T> mean_row_blocks(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                                \
  template Tensor<T> stack_rows(const std::vector<Tensor<T>>&);                                             \
  template Tensor<T> pairwise_sq_dist(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> nll(const Tensor<T>&, const std::vector<std::size_t>&);                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);             \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,         \
                                  Tensor<T>&, bool, T, T);                                                  \
  template Tensor<T> to_local_rows(const Tensor<T>&);                                                       \
  template Tensor<T> from_local_rows(const Tensor<T>&, std::size_t, std::size_t);

BIFRN_INSTANTIATE_OPS(float)
BIFRN_INSTANTIATE_OPS(double)

#undef BIFRN_INSTANTIATE_OPS

}  // namespace bifrn::ops
