#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "simac/ops.hpp"
#include "simac/tensor.hpp"

namespace simac::diffusion {

/// Per-step variances of the forward process. Timesteps are 0-based, t in [0, T).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  void check_t(int t) const {
    if (t < 0 || t >= T)
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  }
};

inline NoiseSchedule schedule_linear(int T, double beta_min = 1e-4, double beta_max = 0.02) {
  if (T < 2) throw std::invalid_argument("schedule_linear: T must be >= 2");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw std::invalid_argument("schedule_linear: need 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.betas[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t) / static_cast<double>(T - 1);
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_t(t);
  if (x0.shape() != eps.shape())
    throw shape_error("forward_sample: eps shape " + shape_str(eps.shape()) + " differs from x0 " +
                      shape_str(x0.shape()));
  const double ab = sched.alpha_bars[t];
  return ops::axpby(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

/// Batched variant: row n of x0 (dim 0) is noised at timestep ts[n].
inline Tensor forward_sample(const Tensor& x0, const std::vector<int>& ts, const Tensor& eps,
                             const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) throw shape_error("forward_sample: eps/x0 shape mismatch");
  if (ts.size() != x0.dim(0)) throw shape_error("forward_sample: one timestep per batch row required");
  const std::size_t per = x0.numel() / x0.dim(0);
  std::vector<double> a(x0.numel()), b(x0.numel());
  for (std::size_t n = 0; n < ts.size(); ++n) {
    sched.check_t(ts[n]);
    const double ab = sched.alpha_bars[ts[n]];
    std::fill_n(a.begin() + n * per, per, std::sqrt(ab));
    std::fill_n(b.begin() + n * per, per, std::sqrt(1.0 - ab));
  }
  return ops::add(ops::mul(x0, Tensor::from(x0.shape(), std::move(a))),
                  ops::mul(eps, Tensor::from(x0.shape(), std::move(b))));
}

/// Inverts the forward process given a noise estimate.
inline Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
  sched.check_t(t);
  const double ab = sched.alpha_bars[t];
  if (ab < 1e-12) throw std::domain_error("predict_x0: alpha_bar below 1e-12 at t=" + std::to_string(t));
  const double inv = 1.0 / std::sqrt(ab);
  return ops::axpby(x_t, inv, eps_hat, -std::sqrt(1.0 - ab) * inv);
}

}  // namespace simac::diffusion
