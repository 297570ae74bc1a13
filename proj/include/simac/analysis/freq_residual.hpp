#pragma once

// Spectral content of the error made when reconstructing x0 from a noisy
// sample at various timesteps.

#include <ostream>
#include <vector>

#include "simac/analysis/spectrum.hpp"
#include "simac/diffusion/training.hpp"
#include "simac/harness/keyvalue.hpp"

namespace simac::analysis {

/// Inclusive timestep range.
struct TimeRange {
  int lo = 0, hi = 0;
};

struct FreqRangeResult {
  TimeRange range;
  RadialSpectrum profile;
  double high_share = 0.0;
  double low_share = 0.0;
};

template <diffusion::NoisePredictor M>
std::vector<FreqRangeResult> freq_residual_study(const M& model, const diffusion::NoiseSchedule& sched,
                                                 const Tensor& x0, int cond, const std::vector<TimeRange>& ranges,
                                                 int samples, Rng& rng,
                                                 MagnitudeKind kind = MagnitudeKind::amplitude) {
  NoGradGuard no_grad;
  if (samples < 1) throw std::invalid_argument("freq_residual_study: samples must be >= 1");
  const Tensor image = x0.rank() == 4 ? diffusion::unstack_images(x0).front() : x0;
  std::vector<FreqRangeResult> out;
  for (auto r : ranges) {
    if (r.lo < 0 || r.hi >= sched.T || r.lo > r.hi) throw std::out_of_range("freq_residual_study: bad range");
    std::vector<int> ts(samples);
    for (auto& t : ts) t = static_cast<int>(rng.integer(r.lo, r.hi));
    Tensor batch = diffusion::stack_images(std::vector<Tensor>(samples, image));
    Tensor eps = rng.normal_tensor(batch.shape());
    Tensor x_t = diffusion::forward_sample(batch, ts, eps, sched);
    Tensor eps_hat = model.forward(x_t, ts, std::vector<int>(samples, cond));
    const std::size_t per = image.numel();
    std::vector<RadialSpectrum> profiles;
    for (int s = 0; s < samples; ++s) {
      const double ab = sched.alpha_bars[ts[s]];
      std::vector<double> residual(per);
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t k = s * per + i;
        const double x0_hat = (x_t.data()[k] - std::sqrt(1.0 - ab) * eps_hat.data()[k]) / std::sqrt(ab);
        residual[i] = x0_hat - image.data()[i];
      }
      profiles.push_back(radial_profile(fft2d(Tensor::from(image.shape(), std::move(residual))), kind));
    }
    FreqRangeResult res{r, average_profiles(profiles)};
    res.high_share = high_frequency_share(res.profile);
    res.low_share = low_frequency_share(res.profile);
    out.push_back(std::move(res));
  }
  return out;
}

inline void write_freq_csv(std::ostream& os, const std::vector<FreqRangeResult>& results) {
  os << "t_lo,t_hi,bin,ring_lo,magnitude,high_share,low_share\n";
  for (auto& r : results)
    for (std::size_t b = 0; b < r.profile.magnitudes.size(); ++b)
      os << r.range.lo << ',' << r.range.hi << ',' << b << ',' << harness::format_double(r.profile.bin_edges[b]) << ','
         << harness::format_double(r.profile.magnitudes[b]) << ',' << harness::format_double(r.high_share) << ','
         << harness::format_double(r.low_share) << '\n';
}

}  // namespace simac::analysis
