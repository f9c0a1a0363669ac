#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/layers.hpp"
#include "pathmamba/ops.hpp"
#include "pathmamba/rng.hpp"
#include "pathmamba/tensor.hpp"

// Selective state-space kernel: diagonal ZOH discretization, input-dependent
// (delta, B, C), and the linear recurrence h_t = Abar_t * h_{t-1} + Bbar_t x_t,
// y_t = C_t . h_t, evaluated either sequentially or with a Blelloch scan.

namespace pathmamba {

/// Below this |delta * a| the ZOH input gain switches to its Taylor series.
inline constexpr double kZohTaylorThreshold = 1e-4;

namespace zoh {

/// Input gain (exp(delta*a) - 1) / a of the diagonal ZOH rule; tends to delta
/// as a -> 0.
template <class T>
T gain(T delta, T a) {
  const T z = delta * a;
  if (std::abs(z) < T(kZohTaylorThreshold)) return delta * (T(1) + z / T(2) + z * z / T(6));
  return std::expm1(z) / a;
}

/// d gain / d delta = exp(delta*a).
template <class T>
T gain_d_delta(T delta, T a) {
  return std::exp(delta * a);
}

/// d gain / d a = delta^2 * (z e^z - expm1 z) / z^2 with z = delta*a.
template <class T>
T gain_d_a(T delta, T a) {
  const T z = delta * a;
  T g;
  if (std::abs(z) < T(1e-2)) {
    g = T(0.5) + z * (T(1) / T(3) + z * (T(1) / T(8) + z * (T(1) / T(30) + z / T(144))));
  } else {
    g = (z * std::exp(z) - std::expm1(z)) / (z * z);
  }
  return delta * delta * g;
}

}  // namespace zoh

/// Parameters of one selective SSM (token mixer). `channels` is D and
/// `state` is N; A = -exp(A_log) is diagonal per channel.
template <class T>
struct SSMParams {
  std::size_t d_model = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  Linear<T> in_proj;     // d_model -> D
  Tensor<T> A_log;       // [D, N]
  Linear<T> delta_proj;  // d_model -> D, with bias
  Linear<T> B_proj;      // d_model -> N
  Linear<T> C_proj;      // d_model -> N
  Linear<T> out_proj;    // D -> d_model

  static SSMParams init(std::size_t d_model, std::size_t channels, std::size_t state,
                        SplitMix64& rng) {
    SSMParams p;
    p.d_model = d_model;
    p.channels = channels;
    p.state = state;
    p.in_proj = Linear<T>::init(d_model, channels, true, rng);
    p.A_log = Tensor<T>({channels, state});
    for (std::size_t d = 0; d < channels; ++d)
      for (std::size_t n = 0; n < state; ++n) p.A_log[d * state + n] = T(std::log(double(n + 1)));
    p.delta_proj = Linear<T>::init(d_model, channels, true, rng);
    for (auto& w : p.delta_proj.weight.vec()) w *= T(0.1);
    // softplus(bias) log-uniform in [1e-3, 1e-1]
    for (auto& b : p.delta_proj.bias.vec()) {
      const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      b = T(dt + std::log(-std::expm1(-dt)));
    }
    p.B_proj = Linear<T>::init(d_model, state, false, rng);
    p.C_proj = Linear<T>::init(d_model, state, false, rng);
    p.out_proj = Linear<T>::init(channels, d_model, true, rng);
    return p;
  }

  /// A = -exp(A_log) (no gradient record).
  Tensor<T> A() const {
    Tensor<T> a(A_log.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] = -std::exp(A_log[i]);
    return a;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    in_proj.collect(prefix + ".in_proj", out);
    out.emplace_back(prefix + ".A_log", A_log);
    delta_proj.collect(prefix + ".delta_proj", out);
    B_proj.collect(prefix + ".B_proj", out);
    C_proj.collect(prefix + ".C_proj", out);
    out_proj.collect(prefix + ".out_proj", out);
  }

  static std::size_t param_count(std::size_t d_model, std::size_t channels, std::size_t state) {
    return (d_model * channels + channels)    // in_proj
           + channels * state                 // A_log
           + (d_model * channels + channels)  // delta_proj
           + 2 * d_model * state              // B_proj, C_proj
           + (channels * d_model + d_model);  // out_proj
  }
};

/// Discretized sequence: Abar and Bbar*x per step, plus the readout C.
template <class T>
struct DiscreteParams {
  Tensor<T> Abar;    // [L, D, N]
  Tensor<T> Bbar_x;  // [L, D, N]
  Tensor<T> C;       // [L, N]

  std::size_t length() const { return Abar.dim(0); }
  std::size_t channels() const { return Abar.dim(1); }
  std::size_t state() const { return Abar.dim(2); }
};

/// ZOH for one step with diagonal A: Abar = exp(delta*A),
/// Bbar = ((exp(delta*A) - 1) / A) * B, elementwise over [D, N].
template <class T>
std::pair<Tensor<T>, Tensor<T>> discretize_zoh(const Tensor<T>& A, const Tensor<T>& B_t,
                                               const Tensor<T>& delta_t) {
  if (A.rank() != 2 || B_t.numel() != A.dim(1) || delta_t.numel() != A.dim(0))
    throw DimensionError("discretize_zoh: shapes A" + shape_str(A.shape()) + " B" +
                         shape_str(B_t.shape()) + " delta" + shape_str(delta_t.shape()));
  const std::size_t D = A.dim(0), N = A.dim(1);
  Tensor<T> abar({D, N}), bbar({D, N});
  for (std::size_t d = 0; d < D; ++d) {
    const T dt = delta_t[d];
    if (!(dt > T(0))) throw DomainError("discretize_zoh: delta must be positive");
    for (std::size_t n = 0; n < N; ++n) {
      const T a = A[d * N + n];
      abar[d * N + n] = std::exp(dt * a);
      bbar[d * N + n] = zoh::gain(dt, a) * B_t[n];
    }
  }
  return {abar, bbar};
}

/// Discretizes a whole sequence: u [L,D] (SSM input), delta [L,D], A [D,N],
/// B [L,N], C [L,N].
template <class T>
DiscreteParams<T> discretize_sequence(const Tensor<T>& u, const Tensor<T>& delta,
                                      const Tensor<T>& A, const Tensor<T>& B, const Tensor<T>& C) {
  const std::size_t L = u.dim(0), D = A.dim(0), N = A.dim(1);
  if (u.shape() != Shape{L, D} || delta.shape() != Shape{L, D} || B.shape() != Shape{L, N} ||
      C.shape() != Shape{L, N})
    throw DimensionError("discretize_sequence: inconsistent shapes");
  DiscreteParams<T> dp{Tensor<T>({L, D, N}), Tensor<T>({L, D, N}), C.clone()};
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      const T dt = delta[t * D + d];
      if (!(dt > T(0))) throw DomainError("discretize_sequence: delta must be positive");
      for (std::size_t n = 0; n < N; ++n) {
        const T a = A[d * N + n];
        const std::size_t i = (t * D + d) * N + n;
        dp.Abar[i] = std::exp(dt * a);
        dp.Bbar_x[i] = zoh::gain(dt, a) * B[t * N + n] * u[t * D + d];
      }
    }
  return dp;
}

namespace detail {

template <class T>
void check_discrete(const DiscreteParams<T>& dp, const Tensor<T>& h0) {
  if (dp.Abar.rank() != 3 || dp.Bbar_x.shape() != dp.Abar.shape() ||
      dp.C.shape() != Shape{dp.length(), dp.state()})
    throw DimensionError("scan: inconsistent discrete parameter shapes");
  if (h0.defined() && h0.shape() != Shape{dp.channels(), dp.state()})
    throw DimensionError("scan: h0 must be [D, N]");
}

// y_t[d] = sum_n C_t[n] h_t[d, n] for a full [L, D, N] state history.
template <class T>
Tensor<T> readout(const std::vector<T>& h, const Tensor<T>& C, std::size_t L, std::size_t D,
                  std::size_t N) {
  Tensor<T> y({L, D});
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) acc += C[t * N + n] * h[(t * D + d) * N + n];
      y[t * D + d] = acc;
    }
  return y;
}

template <class T>
std::vector<T> states_sequential(const DiscreteParams<T>& dp, const Tensor<T>& h0) {
  const std::size_t L = dp.length(), DN = dp.channels() * dp.state();
  std::vector<T> h(L * DN);
  std::vector<T> prev(DN, T(0));
  if (h0.defined()) std::copy(h0.ptr(), h0.ptr() + DN, prev.begin());
  for (std::size_t t = 0; t < L; ++t) {
    const T* a = dp.Abar.ptr() + t * DN;
    const T* bx = dp.Bbar_x.ptr() + t * DN;
    T* cur = h.data() + t * DN;
    for (std::size_t i = 0; i < DN; ++i) cur[i] = a[i] * prev[i] + bx[i];
    std::copy(cur, cur + DN, prev.begin());
  }
  return h;
}

// Affine map h -> a*h + b; compose(first, second) applies first, then second.
template <class T>
struct Affine {
  T a = T(1);
  T b = T(0);
};

template <class T>
Affine<T> compose(const Affine<T>& first, const Affine<T>& second) {
  return {first.a * second.a, second.a * first.b + second.b};
}

template <class T>
std::vector<T> states_parallel(const DiscreteParams<T>& dp, const Tensor<T>& h0) {
  const std::size_t L = dp.length(), DN = dp.channels() * dp.state();
  std::size_t n = 1;
  while (n < L) n <<= 1;
  std::vector<T> h(L * DN);
  std::vector<Affine<T>> buf(n);
  for (std::size_t c = 0; c < DN; ++c) {
    for (std::size_t t = 0; t < n; ++t)
      buf[t] = t < L ? Affine<T>{dp.Abar[t * DN + c], dp.Bbar_x[t * DN + c]} : Affine<T>{};
    // up-sweep: buf[i] becomes the reduction of its subtree
    for (std::size_t d = 1; d < n; d <<= 1)
      for (std::size_t i = 2 * d - 1; i < n; i += 2 * d) buf[i] = compose(buf[i - d], buf[i]);
    // down-sweep: exclusive prefixes
    buf[n - 1] = Affine<T>{};
    for (std::size_t d = n >> 1; d >= 1; d >>= 1) {
      for (std::size_t i = 2 * d - 1; i < n; i += 2 * d) {
        const Affine<T> left = buf[i - d];
        buf[i - d] = buf[i];
        buf[i] = compose(buf[i], left);
      }
    }
    const T init = h0.defined() ? h0[c] : T(0);
    for (std::size_t t = 0; t < L; ++t) {
      const Affine<T> inclusive =
          compose(buf[t], Affine<T>{dp.Abar[t * DN + c], dp.Bbar_x[t * DN + c]});
      h[t * DN + c] = inclusive.a * init + inclusive.b;
    }
  }
  return h;
}

}  // namespace detail

/// Reference recurrence. h0 may be undefined (zeros).
template <class T>
Tensor<T> scan_sequential(const DiscreteParams<T>& dp, const Tensor<T>& h0 = {}) {
  detail::check_discrete(dp, h0);
  return detail::readout(detail::states_sequential(dp, h0), dp.C, dp.length(), dp.channels(),
                         dp.state());
}

/// Same result via the associative operator (a1,b1).(a2,b2) = (a1 a2, a2 b1 + b2)
/// and a Blelloch up/down sweep over each (channel, state) lane.
template <class T>
Tensor<T> scan_parallel(const DiscreteParams<T>& dp, const Tensor<T>& h0 = {}) {
  detail::check_discrete(dp, h0);
  return detail::readout(detail::states_parallel(dp, h0), dp.C, dp.length(), dp.channels(),
                         dp.state());
}

enum class ScanMode { sequential, parallel };

/// Fused discretize + scan + readout with a tape rule. Inputs: u [L,D],
/// delta [L,D] (> 0), A [D,N] (< 0), B [L,N], C [L,N]. The backward pass
/// runs the adjoint recurrence g_t = C_t dy_t + Abar_{t+1} g_{t+1}.
template <class T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                         const Tensor<T>& B, const Tensor<T>& C,
                         ScanMode mode = ScanMode::sequential) {
  DiscreteParams<T> dp = discretize_sequence(u, delta, A, B, C);
  const std::size_t L = dp.length(), D = dp.channels(), N = dp.state();
  std::vector<T> h = mode == ScanMode::parallel ? detail::states_parallel(dp, Tensor<T>{})
                                                : detail::states_sequential(dp, Tensor<T>{});
  Tensor<T> y = detail::readout(h, C, L, D, N);
  if (needs_record<T>(u, delta, A, B, C)) {
    record_op(y, [u, delta, A, B, C, L, D, N, abar = dp.Abar, h = std::move(h)](
                     std::span<const T> gy) {
      T* gu = grad_sink(u);
      T* gdelta = grad_sink(delta);
      T* gA = grad_sink(A);
      T* gB = grad_sink(B);
      T* gC = grad_sink(C);
      const std::size_t DN = D * N;
      std::vector<T> g(DN, T(0));
      for (std::size_t tt = L; tt-- > 0;) {
        const T* ht = h.data() + tt * DN;
        const T* hprev = tt > 0 ? h.data() + (tt - 1) * DN : nullptr;
        const T* a_next = tt + 1 < L ? abar.ptr() + (tt + 1) * DN : nullptr;
        for (std::size_t d = 0; d < D; ++d) {
          const T dy = gy[tt * D + d];
          const T dt = delta[tt * D + d];
          const T ut = u[tt * D + d];
          T du = 0, ddelta = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t i = d * N + n;
            const T cn = C[tt * N + n];
            const T bn = B[tt * N + n];
            T gi = cn * dy + (a_next ? a_next[i] * g[i] : T(0));
            g[i] = gi;
            if (gC) gC[tt * N + n] += dy * ht[i];
            const T an = A[i];
            const T ab = abar[tt * DN + i];
            const T f = zoh::gain(dt, an);
            const T d_abar = hprev ? gi * hprev[i] : T(0);
            const T d_f = gi * bn * ut;
            du += gi * f * bn;
            if (gB) gB[tt * N + n] += gi * f * ut;
            ddelta += d_abar * ab * an + d_f * zoh::gain_d_delta(dt, an);
            if (gA) gA[i] += d_abar * ab * dt + d_f * zoh::gain_d_a(dt, an);
          }
          if (gu) gu[tt * D + d] += du;
          if (gdelta) gdelta[tt * D + d] += ddelta;
        }
      }
    });
  }
  return y;
}

template <class T>
struct SelectiveParams {
  Tensor<T> delta;  // [L, D], strictly positive
  Tensor<T> B;      // [L, N]
  Tensor<T> C;      // [L, N]
};

/// delta = softplus(x W_delta + b_delta); B, C are per-token projections.
template <class T>
SelectiveParams<T> selective_params(const Tensor<T>& x, const SSMParams<T>& p) {
  return {softplus(p.delta_proj(x)), p.B_proj(x), p.C_proj(x)};
}

/// Token mixer over a sequence x [L, d_model]. With `ablate_identity` the
/// SSM is replaced by the identity map and x is returned unchanged.
template <class T>
Tensor<T> ssm_forward(const Tensor<T>& x, const SSMParams<T>& p, bool ablate_identity = false,
                      ScanMode mode = ScanMode::sequential) {
  if (ablate_identity) return x;
  if (x.rank() != 2 || x.dim(1) != p.d_model)
    throw DimensionError("ssm_forward: expected [L, " + std::to_string(p.d_model) + "], got " +
                         shape_str(x.shape()));
  const Tensor<T> u = p.in_proj(x);
  const auto sel = selective_params(x, p);
  const Tensor<T> A = neg(exp(p.A_log));
  const Tensor<T> y = selective_scan(u, sel.delta, A, sel.B, sel.C, mode);
  return p.out_proj(y);
}

}  // namespace pathmamba
