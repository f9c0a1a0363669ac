#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pathmamba/ops.hpp"
#include "pathmamba/rng.hpp"
#include "pathmamba/tensor.hpp"

namespace pathmamba {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, SplitMix64& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Affine map over the last dimension: y = x W + b.
template <class T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out] or undefined

  static Linear init(std::size_t in, std::size_t out, bool with_bias, SplitMix64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = uniform_tensor<T>({in, out}, bound, rng);
    if (with_bias) l.bias = uniform_tensor<T>({out}, bound, rng);
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm init(std::size_t d) {
    return LayerNorm{Tensor<T>::full({d}, T(1)), Tensor<T>::zeros({d})};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

template <class T>
std::size_t count_params(const NamedParams<T>& ps) {
  std::size_t n = 0;
  for (const auto& [name, t] : ps) n += t.numel();
  return n;
}

}  // namespace pathmamba
