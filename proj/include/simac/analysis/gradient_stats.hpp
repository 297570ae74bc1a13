#pragma once

// Per-timestep statistics of the input gradient of the denoising loss.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include "simac/diffusion/training.hpp"
#include "simac/harness/keyvalue.hpp"

namespace simac::analysis {

struct BucketStats {
  int t_lo = 0, t_hi = 0;  // [t_lo, t_hi)
  double count_below = 0.0;
  double max_abs = 0.0;
  double mean_abs = 0.0;
  double median_abs = 0.0;
};

struct GradientStats {
  double threshold = 1e-10;
  std::size_t elements = 0;  // per gradient tensor
  std::vector<BucketStats> buckets;
};

/// Half-open buckets of equal width covering [0, T).
inline std::vector<std::pair<int, int>> uniform_buckets(int T, int n) {
  std::vector<std::pair<int, int>> out;
  for (int b = 0; b < n; ++b) out.push_back({b * T / n, (b + 1) * T / n});
  return out;
}

/// Input gradients of the per-sample denoising loss for a batch of (t, eps)
/// draws on one image, returned row by row.
template <diffusion::NoisePredictor M>
std::vector<std::vector<double>> per_sample_input_gradients(const M& model, const diffusion::NoiseSchedule& sched,
                                                            const Tensor& x, int cond, const std::vector<int>& ts,
                                                            Rng& rng) {
  const std::size_t S = ts.size();
  const std::size_t per = x.numel();
  const Tensor image = x.rank() == 4 ? diffusion::unstack_images(x).front() : x;
  Tensor batch = diffusion::stack_images(std::vector<Tensor>(S, image));
  batch.set_requires_grad(true);
  Tensor eps = rng.normal_tensor(batch.shape());
  // Scaling by S turns the batch mean into a sum of per-sample losses.
  Tensor loss = ops::mul(diffusion::training_loss(model, sched, batch, ts, eps, std::vector<int>(S, cond)),
                         static_cast<double>(S));
  std::vector<std::vector<double>> out(S, std::vector<double>(per, 0.0));
  if (!loss.requires_grad()) return out;
  loss.backward();
  if (!batch.has_grad()) return out;
  auto g = batch.grad();
  for (std::size_t s = 0; s < S; ++s) std::copy_n(g.begin() + s * per, per, out[s].begin());
  return out;
}

template <diffusion::NoisePredictor M>
GradientStats gradient_stats(const M& model, const diffusion::NoiseSchedule& sched, const Tensor& x, int cond,
                             const std::vector<std::pair<int, int>>& buckets, int samples_per_bucket,
                             double threshold, Rng& rng) {
  GradientStats out;
  out.threshold = threshold;
  out.elements = x.numel();
  int expected_lo = 0;
  for (auto [lo, hi] : buckets) {
    if (lo != expected_lo || hi <= lo) throw std::invalid_argument("gradient_stats: buckets must partition [0, T)");
    expected_lo = hi;
  }
  if (expected_lo != sched.T) throw std::invalid_argument("gradient_stats: buckets must partition [0, T)");

  for (auto [lo, hi] : buckets) {
    std::vector<int> ts(samples_per_bucket);
    for (auto& t : ts) t = static_cast<int>(rng.integer(lo, hi - 1));
    auto grads = per_sample_input_gradients(model, sched, x, cond, ts, rng);
    BucketStats b{lo, hi};
    for (auto& g : grads) {
      std::vector<double> a(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) a[i] = std::abs(g[i]);
      double sum = 0.0, mx = 0.0;
      std::size_t below = 0;
      for (double v : a) {
        sum += v;
        mx = std::max(mx, v);
        below += v < threshold;
      }
      std::nth_element(a.begin(), a.begin() + a.size() / 2, a.end());
      double median = a[a.size() / 2];
      if (a.size() % 2 == 0) {
        const double lower = *std::max_element(a.begin(), a.begin() + a.size() / 2);
        median = 0.5 * (median + lower);
      }
      b.count_below += static_cast<double>(below);
      b.max_abs += mx;
      b.mean_abs += sum / static_cast<double>(a.size());
      b.median_abs += median;
    }
    const double n = static_cast<double>(grads.size());
    b.count_below /= n;
    b.max_abs /= n;
    b.mean_abs /= n;
    b.median_abs /= n;
    out.buckets.push_back(b);
  }
  return out;
}

inline void write_gradient_stats_csv(std::ostream& os, const GradientStats& s) {
  os << "t_lo,t_hi,threshold,elements,count_below,max_abs,mean_abs,median_abs\n";
  for (auto& b : s.buckets)
    os << b.t_lo << ',' << b.t_hi << ',' << harness::format_double(s.threshold) << ',' << s.elements << ','
       << harness::format_double(b.count_below) << ',' << harness::format_double(b.max_abs) << ','
       << harness::format_double(b.mean_abs) << ',' << harness::format_double(b.median_abs) << '\n';
}

}  // namespace simac::analysis
