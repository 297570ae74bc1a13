#pragma once

// Procedural subjects. A subject is a fixed set of generator parameters; its
// images differ only by small translations and pixel noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "simac/diffusion/training.hpp"
#include "simac/rng.hpp"

namespace simac::customize {

struct Blob {
  double cx, cy, sigma, amplitude;
};

struct SubjectParams {
  double background = 0.3;
  std::array<Blob, 3> blobs{};
  double stripe_freq = 0.2;  // cycles per pixel
  double stripe_angle = 0.0;
  double stripe_phase = 0.0;
  double stripe_amp = 0.1;
  double contrast = 1.0;
};

struct Subject {
  int id = 0;
  SubjectParams params;
  std::vector<Tensor> train;
  std::vector<Tensor> heldout;
};

struct SubjectOptions {
  std::size_t image_size = 32;
  std::size_t n_train = 5;
  std::size_t n_heldout = 3;
  int max_shift = 2;
  double pixel_noise = 0.02;
};

inline SubjectParams random_subject_params(Rng& rng) {
  SubjectParams p;
  p.background = rng.uniform(0.15, 0.45);
  for (auto& b : p.blobs) {
    b.cx = rng.uniform(8.0, 24.0);
    b.cy = rng.uniform(8.0, 24.0);
    b.sigma = rng.uniform(2.5, 5.5);
    b.amplitude = rng.uniform(0.25, 0.55) * (rng.uniform() < 0.75 ? 1.0 : -1.0);
  }
  p.stripe_freq = rng.uniform(0.12, 0.35);
  p.stripe_angle = rng.uniform(0.0, M_PI);
  p.stripe_phase = rng.uniform(0.0, 2.0 * M_PI);
  p.stripe_amp = rng.uniform(0.06, 0.14);
  p.contrast = rng.uniform(0.8, 1.2);
  return p;
}

inline Tensor render_subject(const SubjectParams& p, double dx, double dy, std::size_t size, double noise,
                             Rng& rng) {
  std::vector<double> v(size * size);
  const double c = std::cos(p.stripe_angle), s = std::sin(p.stripe_angle);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) - dx, py = static_cast<double>(y) - dy;
      double val = 0.0;
      for (auto& b : p.blobs) {
        const double r2 = (px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy);
        val += b.amplitude * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
      }
      val += p.stripe_amp * std::sin(2.0 * M_PI * p.stripe_freq * (c * px + s * py) + p.stripe_phase);
      val = p.background + p.contrast * val + noise * rng.normal();
      v[y * size + x] = std::clamp(val, 0.0, 1.0);
    }
  return Tensor::from({1, size, size}, std::move(v));
}

inline Tensor jittered_image(const SubjectParams& p, const SubjectOptions& opt, Rng& rng) {
  const double dx = static_cast<double>(rng.integer(-opt.max_shift, opt.max_shift));
  const double dy = static_cast<double>(rng.integer(-opt.max_shift, opt.max_shift));
  return render_subject(p, dx, dy, opt.image_size, opt.pixel_noise, rng);
}

inline Subject synth_subject(Rng& rng, int id = 0, const SubjectOptions& opt = {}) {
  Subject s;
  s.id = id;
  s.params = random_subject_params(rng);
  for (std::size_t i = 0; i < opt.n_train; ++i) s.train.push_back(jittered_image(s.params, opt, rng));
  for (std::size_t i = 0; i < opt.n_heldout; ++i) s.heldout.push_back(jittered_image(s.params, opt, rng));
  return s;
}

inline std::vector<Subject> synth_corpus(std::size_t n_subjects, std::size_t per_subject, Rng& rng,
                                         SubjectOptions opt = {}) {
  if (n_subjects < 1) throw std::invalid_argument("synth_corpus: need at least one subject");
  opt.n_train = per_subject;
  std::vector<Subject> out;
  for (std::size_t i = 0; i < n_subjects; ++i) out.push_back(synth_subject(rng, static_cast<int>(i), opt));
  return out;
}

/// Training images of every subject, bound to their subject id.
inline diffusion::ImageSet to_image_set(const std::vector<Subject>& corpus) {
  diffusion::ImageSet set;
  for (auto& s : corpus)
    for (auto& im : s.train) {
      set.images.push_back(im);
      set.conds.push_back(s.id);
    }
  return set;
}

}  // namespace simac::customize
