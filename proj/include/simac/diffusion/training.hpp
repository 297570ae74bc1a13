#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <stdexcept>
#include <vector>

#include "simac/diffusion/denoiser.hpp"
#include "simac/diffusion/schedule.hpp"
#include "simac/ops.hpp"
#include "simac/optim.hpp"
#include "simac/rng.hpp"

namespace simac::diffusion {

template <typename M>
concept NoisePredictor = requires(const M& m, const Tensor& x, const std::vector<int>& v, FeatureSet* f) {
  { m.forward(x, v, v, f) } -> std::convertible_to<Tensor>;
};

/// Images with one condition id each. Images are [C,H,W].
struct ImageSet {
  std::vector<Tensor> images;
  std::vector<int> conds;

  std::size_t size() const { return images.size(); }
};

/// Stacks [C,H,W] images (or [1,C,H,W]) into an [N,C,H,W] leaf.
inline Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw shape_error("stack_images: empty list");
  const std::size_t per = images.front().numel();
  Shape shape = images.front().shape();
  if (shape.size() == 4) shape.erase(shape.begin());
  if (shape.size() != 3) throw shape_error("stack_images: expected [C,H,W] images");
  std::vector<double> v;
  v.reserve(per * images.size());
  for (auto& im : images) {
    if (im.numel() != per) throw shape_error("stack_images: images differ in size");
    v.insert(v.end(), im.data().begin(), im.data().end());
  }
  shape.insert(shape.begin(), images.size());
  return Tensor::from(std::move(shape), std::move(v));
}

/// Splits an [N,C,H,W] tensor into N detached [C,H,W] images.
inline std::vector<Tensor> unstack_images(const Tensor& batch) {
  std::vector<Tensor> out;
  const std::size_t per = batch.numel() / batch.dim(0);
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  for (std::size_t n = 0; n < batch.dim(0); ++n)
    out.push_back(Tensor::from(shape, std::vector<double>(batch.data().begin() + n * per,
                                                          batch.data().begin() + (n + 1) * per)));
  return out;
}

/// || eps - eps_theta(x_t, t, c) ||^2 averaged over elements, x_t from the forward process.
template <NoisePredictor M>
Tensor training_loss(const M& model, const NoiseSchedule& sched, const Tensor& x0,
                     const std::vector<int>& ts, const Tensor& eps, const std::vector<int>& conds,
                     FeatureSet* taps = nullptr) {
  Tensor x_t = forward_sample(x0, ts, eps, sched);
  return ops::mse(eps, model.forward(x_t, ts, conds, taps));
}

template <NoisePredictor M>
Tensor training_loss(const M& model, const NoiseSchedule& sched, const Tensor& x0, int t,
                     const Tensor& eps, int cond = kUnconditional, FeatureSet* taps = nullptr) {
  const std::size_t n = x0.dim(0);
  return training_loss(model, sched, x0, std::vector<int>(n, t), eps, std::vector<int>(n, cond), taps);
}

/// eps_hat and every decoder output for one pass.
template <NoisePredictor M>
std::pair<Tensor, FeatureSet> denoise_with_features(const M& model, const Tensor& x_t, int t, int cond) {
  FeatureSet feats;
  const std::size_t n = x_t.dim(0);
  Tensor eps_hat = model.forward(x_t, std::vector<int>(n, t), std::vector<int>(n, cond), &feats);
  return {eps_hat, std::move(feats)};
}

struct TrainOptions {
  long steps = 3000;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  /// Probability of replacing a sample's condition with the unconditional id.
  double cond_dropout = 0.0;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> losses;
};

class divergence_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs `steps` Adam updates on random minibatches with fresh (t, eps) per sample.
inline TrainLog train(Denoiser& model, const NoiseSchedule& sched, const ImageSet& data,
                      const TrainOptions& opt) {
  if (data.images.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.conds.size() != data.images.size()) throw std::invalid_argument("train: conds/images size mismatch");
  TrainLog log;
  if (opt.steps <= 0) return log;
  Rng rng(opt.seed);
  model.set_trainable(true);
  Adam adam(model.parameters(), opt.lr);
  const std::size_t bs = std::min(opt.batch_size, std::max<std::size_t>(1, data.size()));
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  for (long step = 0; step < opt.steps; ++step) {
    std::vector<Tensor> batch;
    std::vector<int> ts, conds;
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        cursor = 0;
      }
      const auto idx = order[cursor++];
      batch.push_back(data.images[idx]);
      ts.push_back(static_cast<int>(rng.integer(0, sched.T - 1)));
      int c = data.conds[idx];
      if (opt.cond_dropout > 0.0 && rng.uniform() < opt.cond_dropout) c = kUnconditional;
      conds.push_back(c);
    }
    Tensor x0 = stack_images(batch);
    Tensor eps = rng.normal_tensor(x0.shape());
    adam.zero_grad();
    Tensor loss = training_loss(model, sched, x0, ts, eps, conds);
    if (!std::isfinite(loss.item()))
      throw divergence_error("training diverged at step " + std::to_string(step));
    loss.backward();
    adam.step();
    log.losses.push_back(loss.item());
  }
  model.set_trainable(true);
  return log;
}

/// Subject fine-tuning: every image is bound to the same condition id.
inline TrainLog finetune(Denoiser& model, const NoiseSchedule& sched, const std::vector<Tensor>& images,
                         int cond, const TrainOptions& opt) {
  ImageSet set{images, std::vector<int>(images.size(), cond)};
  return train(model, sched, set, opt);
}

/// Mean denoising loss over fixed (t, eps) draws derived from `seed`.
template <NoisePredictor M>
double eval_loss(const M& model, const NoiseSchedule& sched, const ImageSet& data, std::uint64_t seed,
                 int draws_per_image = 4) {
  NoGradGuard no_grad;
  Rng rng(seed);
  Tensor x0 = stack_images(data.images);
  double total = 0.0;
  for (int d = 0; d < draws_per_image; ++d) {
    std::vector<int> ts(data.size());
    for (auto& t : ts) t = static_cast<int>(rng.integer(0, sched.T - 1));
    Tensor eps = rng.normal_tensor(x0.shape());
    total += training_loss(model, sched, x0, ts, eps, data.conds).item();
  }
  return total / draws_per_image;
}

/// Ancestral sampling from t = T-1 down to 0; the final images are clamped to [0,1].
template <NoisePredictor M>
std::vector<Tensor> sample(const M& model, const NoiseSchedule& sched, std::size_t n, int cond,
                           std::uint64_t seed, const Shape& image_shape = {1, 32, 32}) {
  NoGradGuard no_grad;
  Rng rng(seed);
  Shape shape = image_shape;
  shape.insert(shape.begin(), n);
  Tensor x = rng.normal_tensor(shape);
  const std::vector<int> conds(n, cond);
  for (int t = sched.T - 1; t >= 0; --t) {
    Tensor eps_hat = model.forward(x, std::vector<int>(n, t), conds);
    const double coef = sched.betas[t] / std::sqrt(1.0 - sched.alpha_bars[t]);
    const double inv = 1.0 / std::sqrt(sched.alphas[t]);
    std::vector<double> next(x.numel());
    auto xv = x.data();
    auto ev = eps_hat.data();
    const double sigma = std::sqrt(sched.betas[t]);
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = inv * (xv[i] - coef * ev[i]);
      if (t > 0) next[i] += sigma * rng.normal();
    }
    x = Tensor::from(shape, std::move(next));
  }
  auto out = x.to_vector();
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return unstack_images(Tensor::from(shape, std::move(out)));
}

}  // namespace simac::diffusion
