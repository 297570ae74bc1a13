#pragma once

#include <cmath>
#include <utility>

#include "simac/diffusion/training.hpp"

namespace simac::attack {

struct InputGradient {
  double abs_sum = 0.0;
  Tensor grad;
};

/// Gradient of the denoising loss with respect to the clean input x ([C,H,W]
/// or [1,C,H,W]) for a given noise draw, and the sum of its absolute entries.
template <diffusion::NoisePredictor M>
InputGradient input_gradient(const M& model, const diffusion::NoiseSchedule& sched, const Tensor& x, int t,
                             const Tensor& eps, int cond) {
  Shape shape = x.shape();
  if (shape.size() == 3) shape.insert(shape.begin(), 1);
  Tensor leaf = Tensor::from(shape, x.to_vector(), true);
  Tensor e = eps.numel() == leaf.numel() ? Tensor::from(shape, eps.to_vector()) : eps;
  Tensor loss = diffusion::training_loss(model, sched, leaf, t, e, cond);
  InputGradient out;
  if (loss.requires_grad()) {
    loss.backward();
    out.grad = Tensor::from(x.shape(), leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                                       : std::vector<double>(leaf.numel(), 0.0));
  } else {
    out.grad = Tensor::zeros(x.shape());
  }
  for (double g : out.grad.data()) out.abs_sum += std::abs(g);
  return out;
}

/// Draws eps from `rng`, then returns input_gradient at timestep t.
template <diffusion::NoisePredictor M>
InputGradient grad_abs_sum(const M& model, const diffusion::NoiseSchedule& sched, const Tensor& x, int t,
                           int cond, Rng& rng) {
  return input_gradient(model, sched, x, t, rng.normal_tensor(x.shape()), cond);
}

}  // namespace simac::attack
