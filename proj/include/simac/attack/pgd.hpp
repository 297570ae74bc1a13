#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "simac/tensor.hpp"

namespace simac::attack {

/// Additive L-inf perturbation of a fixed image set.
struct Perturbation {
  std::vector<Tensor> base_images;
  std::vector<Tensor> delta;
  double eta = 0.0;

  static Perturbation zero(const std::vector<Tensor>& images, double eta) {
    Perturbation p{images, {}, eta};
    for (auto& im : images) p.delta.push_back(Tensor::zeros(im.shape()));
    return p;
  }

  std::size_t size() const { return base_images.size(); }

  /// base + delta for image i, evaluated exactly as the invariants are checked.
  Tensor perturbed(std::size_t i) const {
    std::vector<double> v(base_images[i].numel());
    auto b = base_images[i].data();
    auto d = delta[i].data();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = b[j] + d[j];
    return Tensor::from(base_images[i].shape(), std::move(v));
  }
  std::vector<Tensor> perturbed_images() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(perturbed(i));
    return out;
  }

  double max_abs_delta() const {
    double m = 0.0;
    for (auto& d : delta)
      for (double v : d.data()) m = std::max(m, std::abs(v));
    return m;
  }

  /// |delta| <= eta and base + delta in [0,1], with no tolerance.
  bool satisfies_budget() const {
    for (std::size_t i = 0; i < size(); ++i) {
      auto b = base_images[i].data();
      auto d = delta[i].data();
      for (std::size_t j = 0; j < b.size(); ++j) {
        const double x = b[j] + d[j];
        if (!(std::abs(d[j]) <= eta) || !(x >= 0.0) || !(x <= 1.0)) return false;
      }
    }
    return true;
  }
};

inline double sign_of(double g) { return static_cast<double>((g > 0.0) - (g < 0.0)); }

/// Nudges d by ulps until |d| <= eta and b + d lies in [0,1] under rounding.
inline double repair_delta(double b, double d, double eta) {
  d = std::clamp(d, -eta, eta);
  for (int guard = 0; guard < 64; ++guard) {
    const double x = b + d;
    if (x > 1.0) d = std::nextafter(d, -INFINITY);
    else if (x < 0.0) d = std::nextafter(d, INFINITY);
    else break;
  }
  return std::clamp(d, -eta, eta);
}

/// One ascent step: delta <- clip(delta + alpha sgn(g), -eta, eta), then the
/// perturbed image is clipped to [0,1] and delta re-derived from it.
inline void pgd_step(Perturbation& pert, const std::vector<Tensor>& grads, double alpha) {
  if (grads.size() != pert.size()) throw std::invalid_argument("pgd_step: one gradient per image required");
  for (std::size_t i = 0; i < pert.size(); ++i) {
    if (grads[i].numel() != pert.delta[i].numel()) throw shape_error("pgd_step: gradient shape mismatch");
    auto d = pert.delta[i].mutable_data();
    auto b = pert.base_images[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (g[j] == 0.0) continue;
      const double stepped = std::clamp(d[j] + alpha * sign_of(g[j]), -pert.eta, pert.eta);
      const double x = b[j] + stepped;
      d[j] = (x >= 0.0 && x <= 1.0) ? stepped : repair_delta(b[j], std::clamp(x, 0.0, 1.0) - b[j], pert.eta);
    }
  }
}

}  // namespace simac::attack
