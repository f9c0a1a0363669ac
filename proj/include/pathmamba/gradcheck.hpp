#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/tensor.hpp"

namespace pathmamba {

/// One coordinate of a parameter list: (tensor index, element index).
using Coordinate = std::pair<std::size_t, std::size_t>;

/// Compares tape gradients of a scalar function of `params` against central
/// differences (f(x+h e_i) - f(x-h e_i)) / 2h. Returns the maximum over the
/// probed coordinates of |analytic - numeric| / max(1, |analytic|).
/// An empty `coords` probes every element of every parameter.
inline double grad_check_params(const std::function<Tensor<double>()>& f,
                                std::vector<Tensor<double>> params, double h = 1e-6,
                                std::vector<Coordinate> coords = {}) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.drop_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Tensor<double> y = f();
    if (y.numel() != 1) throw DimensionError("grad_check: function must be scalar-valued");
    tape.backward(y);
  }
  if (coords.empty())
    for (std::size_t t = 0; t < params.size(); ++t)
      for (std::size_t i = 0; i < params[t].numel(); ++i) coords.emplace_back(t, i);

  NoGradScope<double> no_grad;
  double worst = 0.0;
  for (auto [t, i] : coords) {
    Tensor<double>& p = params.at(t);
    const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
    const double saved = p[i];
    p[i] = saved + h;
    const double up = f().item();
    p[i] = saved - h;
    const double down = f().item();
    p[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return worst;
}

/// Single-input form: f maps x to a scalar tensor.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double h = 1e-6) {
  Tensor<double> probe = x.clone();
  return grad_check_params([&] { return f(probe); }, {probe}, h);
}

}  // namespace pathmamba
