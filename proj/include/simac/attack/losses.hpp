#pragma once

#include <stdexcept>
#include <vector>

#include "simac/diffusion/training.hpp"

namespace simac::attack {

/// Mean over `layers` of the mean squared difference between feature maps.
inline Tensor feature_loss(const diffusion::FeatureSet& feats, const diffusion::FeatureSet& ref,
                           const std::vector<int>& layers) {
  if (layers.empty()) throw std::invalid_argument("feature_loss: no layers requested");
  Tensor total;
  for (int l : layers) {
    auto f = feats.find(l);
    auto r = ref.find(l);
    if (f == feats.end() || r == ref.end())
      throw std::out_of_range("feature_loss: layer " + std::to_string(l) + " missing from feature set");
    Tensor term = ops::mse(f->second, r->second);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return layers.size() == 1 ? total : ops::mul(total, 1.0 / static_cast<double>(layers.size()));
}

struct CombinedLoss {
  Tensor total;
  Tensor cond_loss;
  Tensor feat_loss;  // undefined when lambda == 0
};

/// Denoising loss on x_adv plus lambda times the feature interference loss
/// against x_clean at the same timesteps and noise. Reference features carry
/// no gradient. With lambda == 0 the total is the denoising loss node itself.
template <diffusion::NoisePredictor M>
CombinedLoss combined_loss(const M& model, const diffusion::NoiseSchedule& sched, const Tensor& x_adv,
                           const Tensor& x_clean, const std::vector<int>& ts, const Tensor& eps,
                           const std::vector<int>& conds, double lambda, const std::vector<int>& layers) {
  if (x_adv.shape() != x_clean.shape()) throw shape_error("combined_loss: x_adv and x_clean differ in shape");
  CombinedLoss out;
  if (lambda == 0.0) {
    out.cond_loss = diffusion::training_loss(model, sched, x_adv, ts, eps, conds);
    out.total = out.cond_loss;
    return out;
  }
  diffusion::FeatureSet ref;
  {
    NoGradGuard no_grad;
    Tensor xc_t = diffusion::forward_sample(x_clean, ts, eps, sched);
    (void)model.forward(xc_t, ts, conds, &ref);
  }
  diffusion::FeatureSet feats;
  out.cond_loss = diffusion::training_loss(model, sched, x_adv, ts, eps, conds, &feats);
  out.feat_loss = feature_loss(feats, ref, layers);
  out.total = ops::add(out.cond_loss, ops::mul(out.feat_loss, lambda));
  return out;
}

template <diffusion::NoisePredictor M>
CombinedLoss combined_loss(const M& model, const diffusion::NoiseSchedule& sched, const Tensor& x_adv,
                           const Tensor& x_clean, int t, const Tensor& eps, int cond, double lambda,
                           const std::vector<int>& layers) {
  const std::size_t n = x_adv.dim(0);
  return combined_loss(model, sched, x_adv, x_clean, std::vector<int>(n, t), eps, std::vector<int>(n, cond), lambda,
                       layers);
}

}  // namespace simac::attack
