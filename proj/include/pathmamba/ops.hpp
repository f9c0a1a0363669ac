#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward value and,
// when a tape is active and an input requires grad, records a backward rule.

namespace pathmamba {

namespace kernel {

// C[m,n] (+)= A[m,k] * B[k,n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(a, bt.data(), c, m, n, k);
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernel

template <class T>
std::size_t last_dim(const Tensor<T>& t) {
  return t.shape().back();
}

template <class T>
std::size_t outer_count(const Tensor<T>& t) {
  return t.numel() / t.shape().back();
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  kernel::gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (needs_record<T>(a, b)) {
    record_op(out, [a, b, m, k, n](std::span<const T> g) {
      if (T* ga = grad_sink(a)) kernel::gemm_nt(g.data(), b.ptr(), ga, m, n, k);
      if (T* gb = grad_sink(b)) kernel::gemm_tn(a.ptr(), g.data(), gb, m, k, n);
    });
  }
  return out;
}

/// x[..., in] * W[in, out] + bias[out]; bias may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  if (w.rank() != 2 || last_dim(x) != w.dim(0))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  const std::size_t m = outer_count(x), k = w.dim(0), n = w.dim(1);
  if (bias.defined() && bias.numel() != n)
    throw DimensionError("linear: bias length " + std::to_string(bias.numel()) + " != " +
                         std::to_string(n));
  Shape os = x.shape();
  os.back() = n;
  Tensor<T> out(os);
  T* o = out.ptr();
  if (bias.defined())
    for (std::size_t i = 0; i < m; ++i) std::copy(bias.ptr(), bias.ptr() + n, o + i * n);
  kernel::gemm_nn(x.ptr(), w.ptr(), o, m, k, n);
  const bool rec = bias.defined() ? needs_record<T>(x, w, bias) : needs_record<T>(x, w);
  if (rec) {
    record_op(out, [x, w, bias, m, k, n](std::span<const T> g) {
      if (T* gx = grad_sink(x)) kernel::gemm_nt(g.data(), w.ptr(), gx, m, n, k);
      if (T* gw = grad_sink(w)) kernel::gemm_tn(x.ptr(), g.data(), gw, m, k, n);
      if (bias.defined())
        if (T* gb = grad_sink(bias))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    });
  }
  return out;
}

enum class BinaryOp { add, sub, mul };

/// Elementwise binary op; operands must have equal shape or one must be a
/// single-element tensor.
template <class T>
Tensor<T> binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
  if (!same && !a_scalar && !b_scalar)
    throw DimensionError("elementwise: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const Tensor<T>& big = (same || b_scalar) ? a : b;
  Tensor<T> out(big.shape());
  const std::size_t n = out.numel();
  const std::size_t sa = (a.numel() == n) ? 1 : 0, sb = (b.numel() == n) ? 1 : 0;
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* o = out.ptr();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < n; ++i) o[i] = pa[i * sa] + pb[i * sb];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < n; ++i) o[i] = pa[i * sa] - pb[i * sb];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < n; ++i) o[i] = pa[i * sa] * pb[i * sb];
      break;
  }
  if (needs_record<T>(a, b)) {
    record_op(out, [op, a, b, n, sa, sb](std::span<const T> g) {
      if (T* ga = grad_sink(a)) {
        for (std::size_t i = 0; i < n; ++i) {
          const T d = op == BinaryOp::mul ? g[i] * b.ptr()[i * sb] : g[i];
          ga[i * sa] += d;
        }
      }
      if (T* gb = grad_sink(b)) {
        for (std::size_t i = 0; i < n; ++i) {
          T d = g[i];
          if (op == BinaryOp::sub) d = -d;
          if (op == BinaryOp::mul) d = g[i] * a.ptr()[i * sa];
          gb[i * sb] += d;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryOp::add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryOp::sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryOp::mul, a, b);
}

enum class UnaryOp { silu, gelu, softplus, exp, sigmoid, relu, neg };

namespace detail {

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T unary_fwd(UnaryOp op, T x) {
  switch (op) {
    case UnaryOp::silu: return x * sigmoid(x);
    case UnaryOp::gelu: return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
    case UnaryOp::softplus: return softplus(x);
    case UnaryOp::exp: return std::exp(x);
    case UnaryOp::sigmoid: return sigmoid(x);
    case UnaryOp::relu: return x > T(0) ? x : T(0);
    case UnaryOp::neg: return -x;
  }
  return x;
}

// Derivative given input x and output y.
template <class T>
T unary_bwd(UnaryOp op, T x, T y) {
  switch (op) {
    case UnaryOp::silu: {
      const T s = sigmoid(x);
      return s * (T(1) + x * (T(1) - s));
    }
    case UnaryOp::gelu: {
      const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
      const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
      return cdf + x * pdf;
    }
    case UnaryOp::softplus: return sigmoid(x);
    case UnaryOp::exp: return y;
    case UnaryOp::sigmoid: return y * (T(1) - y);
    case UnaryOp::relu: return x > T(0) ? T(1) : T(0);
    case UnaryOp::neg: return T(-1);
  }
  return T(0);
}

}  // namespace detail

template <class T>
Tensor<T> unary(UnaryOp op, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.numel();
  const T* px = x.ptr();
  T* o = out.ptr();
  for (std::size_t i = 0; i < n; ++i) o[i] = detail::unary_fwd(op, px[i]);
  if (needs_record<T>(x)) {
    Tensor<T> y = out;
    std::weak_ptr<TensorStorage<T>> wy = y.storage();
    record_op(out, [op, x, n, wy](std::span<const T> g) {
      T* gx = grad_sink(x);
      if (!gx) return;
      auto ys = wy.lock();
      for (std::size_t i = 0; i < n; ++i)
        gx[i] += g[i] * detail::unary_bwd(op, x.ptr()[i], ys ? ys->data[i] : T(0));
    });
  }
  return out;
}

template <class T> Tensor<T> silu(const Tensor<T>& x) { return unary(UnaryOp::silu, x); }
template <class T> Tensor<T> gelu(const Tensor<T>& x) { return unary(UnaryOp::gelu, x); }
template <class T> Tensor<T> softplus(const Tensor<T>& x) { return unary(UnaryOp::softplus, x); }
template <class T> Tensor<T> exp(const Tensor<T>& x) { return unary(UnaryOp::exp, x); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& x) { return unary(UnaryOp::sigmoid, x); }
template <class T> Tensor<T> relu(const Tensor<T>& x) { return unary(UnaryOp::relu, x); }
template <class T> Tensor<T> neg(const Tensor<T>& x) { return unary(UnaryOp::neg, x); }

/// Multiplication by a constant (not a tensor; no gradient w.r.t. c).
template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * c;
  if (needs_record<T>(x)) {
    record_op(out, [x, c, n](std::span<const T> g) {
      if (T* gx = grad_sink(x))
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * c;
    });
  }
  return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const std::size_t d = last_dim(x);
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: feature size " + std::to_string(d) + " vs gamma " +
                         std::to_string(gamma.numel()) + ", beta " + std::to_string(beta.numel()));
  const std::size_t m = outer_count(x);
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(m);
  const T* px = x.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = px + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(d);
    const T r = T(1) / std::sqrt(var + eps);
    rstd[i] = r;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * r;
      xhat[i * d + j] = h;
      out[i * d + j] = h * gamma[j] + beta[j];
    }
  }
  if (needs_record<T>(x, gamma, beta)) {
    record_op(out, [x, gamma, beta, m, d, xhat = std::move(xhat), rstd = std::move(rstd)](
                       std::span<const T> g) {
      if (T* gg = grad_sink(gamma))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
      if (T* gb = grad_sink(beta))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      if (T* gx = grad_sink(x)) {
        for (std::size_t i = 0; i < m; ++i) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[i * d + j] * gamma[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[i * d + j];
          }
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[i * d + j] * gamma[j];
            gx[i * d + j] += rstd[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

/// Softmax over the last dimension, stabilized by max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t n = last_dim(x), m = outer_count(x);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.ptr() + i * n;
    T* o = out.ptr() + i * n;
    const T mx = *std::max_element(row, row + n);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
  }
  if (needs_record<T>(x)) {
    std::weak_ptr<TensorStorage<T>> wy = out.storage();
    record_op(out, [x, wy, m, n](std::span<const T> g) {
      T* gx = grad_sink(x);
      auto y = wy.lock();
      if (!gx || !y) return;
      for (std::size_t i = 0; i < m; ++i) {
        const T* yr = y->data.data() + i * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * yr[j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += yr[j] * (g[i * n + j] - dot);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  if (needs_record<T>(x)) {
    record_op(out, [x, m, n](std::span<const T> g) {
      if (T* gx = grad_sink(x))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.vec());
  if (needs_record<T>(x)) {
    record_op(out, [x](std::span<const T> g) {
      if (T* gx = grad_sink(x))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

/// out[t, :] = x[index[t], :] for x viewed as [rows, last_dim].
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index, Shape out_shape) {
  const std::size_t d = last_dim(x), rows = outer_count(x);
  if (shape_numel(out_shape) != index.size() * d || out_shape.back() != d)
    throw DimensionError("gather_rows: output shape " + shape_str(out_shape) +
                         " inconsistent with index length " + std::to_string(index.size()));
  Tensor<T> out(std::move(out_shape));
  for (std::size_t t = 0; t < index.size(); ++t) {
    if (index[t] >= rows) throw DimensionError("gather_rows: index out of range");
    std::copy(x.ptr() + index[t] * d, x.ptr() + (index[t] + 1) * d, out.ptr() + t * d);
  }
  if (needs_record<T>(x)) {
    record_op(out, [x, index, d](std::span<const T> g) {
      if (T* gx = grad_sink(x))
        for (std::size_t t = 0; t < index.size(); ++t)
          for (std::size_t j = 0; j < d; ++j) gx[index[t] * d + j] += g[t * d + j];
    });
  }
  return out;
}

/// Columns [start, start+len) of the last dimension.
template <class T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t start, std::size_t len) {
  const std::size_t n = last_dim(x), m = outer_count(x);
  if (len == 0 || start + len > n) throw DimensionError("slice_last: range out of bounds");
  Shape os = x.shape();
  os.back() = len;
  Tensor<T> out(os);
  for (std::size_t i = 0; i < m; ++i)
    std::copy(x.ptr() + i * n + start, x.ptr() + i * n + start + len, out.ptr() + i * len);
  if (needs_record<T>(x)) {
    record_op(out, [x, start, len, n, m](std::span<const T> g) {
      if (T* gx = grad_sink(x))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < len; ++j) gx[i * n + start + j] += g[i * len + j];
    });
  }
  return out;
}

/// Concatenation along the last dimension; leading dimensions must agree.
template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw DimensionError("concat_last: no inputs");
  const std::size_t m = outer_count(xs[0]);
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != xs[0].rank() || outer_count(x) != m ||
        !std::equal(x.shape().begin(), x.shape().end() - 1, xs[0].shape().begin()))
      throw DimensionError("concat_last: leading dimensions differ");
    total += last_dim(x);
  }
  Shape os = xs[0].shape();
  os.back() = total;
  Tensor<T> out(os);
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t n = last_dim(x);
    for (std::size_t i = 0; i < m; ++i)
      std::copy(x.ptr() + i * n, x.ptr() + (i + 1) * n, out.ptr() + i * total + off);
    off += n;
  }
  if (needs_record_list<T>(xs)) {
    record_op(out, [xs, m, total](std::span<const T> g) {
      std::size_t off = 0;
      for (const auto& x : xs) {
        const std::size_t n = last_dim(x);
        if (T* gx = grad_sink(x))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * total + off + j];
        off += n;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  Tensor<T> out = Tensor<T>::scalar(s);
  if (needs_record<T>(x)) {
    record_op(out, [x](std::span<const T> g) {
      if (T* gx = grad_sink(x))
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

// ---- spatial ops on [H, W, C] maps ----

template <class T>
void require_map(const Tensor<T>& x, const char* op) {
  if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected [H,W,C], got " + shape_str(x.shape()));
}

/// Non-overlapping p x p patches flattened as (dy, dx, c):
/// [H, W, C] -> [H/p, W/p, p*p*C].
template <class T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t p) {
  require_map(x, "patchify");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (p == 0 || h % p != 0 || w % p != 0)
    throw DimensionError("patchify: " + shape_str(x.shape()) + " not divisible by patch " +
                         std::to_string(p));
  const std::size_t oh = h / p, ow = w / p, oc = p * p * c;
  std::vector<std::size_t> src(oh * ow * oc);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t k = 0; k < c; ++k)
            src[((i * ow + j) * p * p + dy * p + dx) * c + k] =
                ((i * p + dy) * w + (j * p + dx)) * c + k;
  Tensor<T> out({oh, ow, oc});
  for (std::size_t t = 0; t < src.size(); ++t) out[t] = x[src[t]];
  if (needs_record<T>(x)) {
    record_op(out, [x, src = std::move(src)](std::span<const T> g) {
      if (T* gx = grad_sink(x))
        for (std::size_t t = 0; t < src.size(); ++t) gx[src[t]] += g[t];
    });
  }
  return out;
}

namespace detail {

// Sparse linear resampling: each output pixel is a weighted sum of input
// pixels (shared across channels).
struct Resample {
  std::size_t out_pixels = 0;
  std::vector<std::size_t> offsets;  // CSR row pointers, size out_pixels + 1
  std::vector<std::size_t> src;
  std::vector<double> weight;
};

template <class T>
Tensor<T> apply_resample(const Tensor<T>& x, Resample r, std::size_t oh, std::size_t ow) {
  const std::size_t c = x.dim(2);
  Tensor<T> out({oh, ow, c});
  for (std::size_t p = 0; p < r.out_pixels; ++p)
    for (std::size_t e = r.offsets[p]; e < r.offsets[p + 1]; ++e) {
      const T wv = T(r.weight[e]);
      const T* in = x.ptr() + r.src[e] * c;
      T* o = out.ptr() + p * c;
      for (std::size_t k = 0; k < c; ++k) o[k] += wv * in[k];
    }
  if (needs_record<T>(x)) {
    record_op(out, [x, r = std::move(r), c](std::span<const T> g) {
      T* gx = grad_sink(x);
      if (!gx) return;
      for (std::size_t p = 0; p < r.out_pixels; ++p)
        for (std::size_t e = r.offsets[p]; e < r.offsets[p + 1]; ++e) {
          const T wv = T(r.weight[e]);
          for (std::size_t k = 0; k < c; ++k) gx[r.src[e] * c + k] += wv * g[p * c + k];
        }
    });
  }
  return out;
}

// 1-D bilinear taps, half-pixel centers (align_corners = false).
inline void bilinear_taps(std::size_t in, std::size_t out, std::vector<std::size_t>& i0,
                          std::vector<std::size_t>& i1, std::vector<double>& w1) {
  i0.resize(out);
  i1.resize(out);
  w1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    auto lo = static_cast<std::size_t>(std::floor(s));
    if (lo > in - 1) lo = in - 1;
    i0[i] = lo;
    i1[i] = std::min(lo + 1, in - 1);
    w1[i] = s - static_cast<double>(lo);
  }
}

}  // namespace detail

/// Adaptive average pooling to an oh x ow grid; bin i covers
/// [floor(i*H/oh), ceil((i+1)*H/oh)).
template <class T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_map(x, "adaptive_avg_pool");
  const std::size_t h = x.dim(0), w = x.dim(1);
  detail::Resample r;
  r.out_pixels = oh * ow;
  r.offsets.push_back(0);
  for (std::size_t i = 0; i < oh; ++i) {
    const std::size_t y0 = i * h / oh, y1 = ((i + 1) * h + oh - 1) / oh;
    for (std::size_t j = 0; j < ow; ++j) {
      const std::size_t x0 = j * w / ow, x1 = ((j + 1) * w + ow - 1) / ow;
      const double wt = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t xx = x0; xx < x1; ++xx) {
          r.src.push_back(y * w + xx);
          r.weight.push_back(wt);
        }
      r.offsets.push_back(r.src.size());
    }
  }
  return detail::apply_resample(x, std::move(r), oh, ow);
}

template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_map(x, "upsample_nearest");
  const std::size_t h = x.dim(0), w = x.dim(1);
  detail::Resample r;
  r.out_pixels = oh * ow;
  r.offsets.push_back(0);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      r.src.push_back((i * h / oh) * w + (j * w / ow));
      r.weight.push_back(1.0);
      r.offsets.push_back(r.src.size());
    }
  return detail::apply_resample(x, std::move(r), oh, ow);
}

template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_map(x, "upsample_bilinear");
  const std::size_t h = x.dim(0), w = x.dim(1);
  std::vector<std::size_t> y0, y1, x0, x1;
  std::vector<double> wy, wx;
  detail::bilinear_taps(h, oh, y0, y1, wy);
  detail::bilinear_taps(w, ow, x0, x1, wx);
  detail::Resample r;
  r.out_pixels = oh * ow;
  r.offsets.push_back(0);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      const std::size_t ys[2] = {y0[i], y1[i]}, xs[2] = {x0[j], x1[j]};
      const double wys[2] = {1 - wy[i], wy[i]}, wxs[2] = {1 - wx[j], wx[j]};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double wt = wys[a] * wxs[b];
          if (wt == 0.0) continue;
          r.src.push_back(ys[a] * w + xs[b]);
          r.weight.push_back(wt);
        }
      r.offsets.push_back(r.src.size());
    }
  return detail::apply_resample(x, std::move(r), oh, ow);
}

}  // namespace pathmamba
