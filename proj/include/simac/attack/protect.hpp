#pragma once

// Alternating surrogate / perturbation optimisation.
//
// Optional up-front timestep selection on the first image, then per epoch:
// a few denoising-loss training steps of the surrogate on the current
// perturbed images, followed by PGD ascent steps on the combined loss with
// timesteps drawn from the selected pool.

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "simac/attack/config.hpp"
#include "simac/attack/losses.hpp"
#include "simac/attack/pgd.hpp"
#include "simac/attack/select.hpp"
#include "simac/optim.hpp"

namespace simac::attack {

inline constexpr double kTinyGradient = 1e-10;

struct MetricRow {
  int epoch = 0;
  int step = 0;
  std::string phase;  // "surrogate" or "attack"
  int t = -1;
  double loss = 0.0;
  double feat_loss = 0.0;
  double grad_abs_mean = 0.0;
  double grad_abs_max = 0.0;
  double frac_below = 0.0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "epoch,step,phase,t,loss,feat_loss,grad_abs_mean,grad_abs_max,frac_below_1e-10\n";
  for (auto& r : rows)
    os << r.epoch << ',' << r.step << ',' << r.phase << ',' << r.t << ',' << harness::format_double(r.loss) << ','
       << harness::format_double(r.feat_loss) << ',' << harness::format_double(r.grad_abs_mean) << ','
       << harness::format_double(r.grad_abs_max) << ',' << harness::format_double(r.frac_below) << '\n';
}

struct ProtectResult {
  Perturbation perturbation;
  diffusion::Denoiser surrogate;
  TimestepPool pool;
  std::optional<SelectionResult> selection;
  std::vector<MetricRow> metrics;

  /// Mean over attack steps of the mean absolute per-pixel gradient.
  double mean_attack_grad_abs() const {
    double s = 0.0;
    int n = 0;
    for (auto& r : metrics)
      if (r.phase == "attack") {
        s += r.grad_abs_mean;
        ++n;
      }
    return n ? s / n : 0.0;
  }
};

/// `cond` is the subject condition the images are bound to.
inline ProtectResult protect(const diffusion::Denoiser& surrogate_init, const diffusion::NoiseSchedule& sched,
                             const std::vector<Tensor>& images, int cond, const AttackConfig& cfg) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("protect: no images");
  for (auto& im : images)
    for (double v : im.data())
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("protect: images must lie in [0,1]");

  ProtectResult res{Perturbation::zero(images, cfg.eta), surrogate_init.clone(), TimestepPool(sched.T), std::nullopt,
                    {}};
  auto& model = res.surrogate;
  Rng rng(cfg.seed);

  if (cfg.selection_enabled) {
    model.set_trainable(false);
    res.selection = adaptive_select(model, sched, images.front(), cond, cfg.search_steps, cfg.alpha, rng);
    res.pool = res.selection->pool;
  }

  const std::size_t n = images.size();
  const std::vector<int> conds(n, cond);
  const Tensor clean = diffusion::stack_images(images);
  model.set_trainable(true);
  Adam adam(model.parameters(), cfg.surrogate_lr);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.set_trainable(true);
    for (int s = 0; s < cfg.surrogate_steps_per_epoch; ++s) {
      Tensor x0 = diffusion::stack_images(res.perturbation.perturbed_images());
      std::vector<int> ts(n);
      for (auto& t : ts) t = static_cast<int>(rng.integer(0, sched.T - 1));
      Tensor eps = rng.normal_tensor(x0.shape());
      adam.zero_grad();
      Tensor loss = diffusion::training_loss(model, sched, x0, ts, eps, conds);
      if (!std::isfinite(loss.item())) throw diffusion::divergence_error("surrogate diverged");
      loss.backward();
      adam.step();
      res.metrics.push_back({epoch, s, "surrogate", -1, loss.item(), 0.0, 0.0, 0.0, 0.0});
    }

    model.set_trainable(false);
    for (int s = 0; s < cfg.attack_steps_per_epoch; ++s) {
      const int t = cfg.selection_enabled ? res.pool.sample(rng) : static_cast<int>(rng.integer(0, sched.T - 1));
      Tensor x_adv = diffusion::stack_images(res.perturbation.perturbed_images());
      x_adv.set_requires_grad(true);
      Tensor eps = rng.normal_tensor(x_adv.shape());
      auto loss = combined_loss(model, sched, x_adv, clean, t, eps, cond, cfg.lambda, cfg.tap_layers);
      loss.total.backward();
      Tensor grad = x_adv.has_grad() ? x_adv.grad_tensor() : Tensor::zeros(x_adv.shape());

      MetricRow row{epoch, s, "attack", t, loss.total.item(),
                    loss.feat_loss.defined() ? loss.feat_loss.item() : 0.0, 0.0, 0.0, 0.0};
      std::size_t below = 0;
      for (double g : grad.data()) {
        const double a = std::abs(g);
        row.grad_abs_mean += a;
        row.grad_abs_max = std::max(row.grad_abs_max, a);
        below += a < kTinyGradient;
      }
      row.grad_abs_mean /= static_cast<double>(grad.numel());
      row.frac_below = static_cast<double>(below) / static_cast<double>(grad.numel());
      res.metrics.push_back(row);

      pgd_step(res.perturbation, diffusion::unstack_images(grad), cfg.alpha);
    }
  }
  model.set_trainable(true);
  return res;
}

}  // namespace simac::attack
