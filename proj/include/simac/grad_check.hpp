#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "simac/tensor.hpp"

namespace simac {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, componentwise. Components where both gradients are below
/// `floor` in magnitude count as exact.
inline GradCheckResult grad_check_detailed(const std::function<Tensor(const Tensor&)>& fn,
                                           const Tensor& x, double eps = 1e-4,
                                           double floor = 1e-8) {
  GradCheckResult r;
  Tensor leaf = x.clone(true);
  Tensor loss = fn(leaf);
  loss.backward();
  r.analytic.assign(leaf.grad().begin(), leaf.grad().end());

  auto probe = x.detach();
  auto values = probe.mutable_data();
  r.numeric.resize(values.size());
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    auto at = [&](double offset) {
      values[i] = orig + offset;
      return fn(probe).item();
    };
    // Fourth-order central stencil.
    r.numeric[i] = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
    values[i] = orig;

    const double a = r.analytic[i], n = r.numeric[i];
    const double scale = std::max(std::abs(a), std::abs(n));
    const double err = scale < floor ? 0.0 : std::abs(a - n) / scale;
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
    }
  }
  return r;
}

inline double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                         double eps = 1e-4) {
  return grad_check_detailed(fn, x, eps).max_rel_error;
}

}  // namespace simac
