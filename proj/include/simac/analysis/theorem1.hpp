#pragma once

// Monte Carlo check that greedy interval selection raises the expected
// gradient magnitude when part of the timestep range yields zero gradient.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "simac/attack/select.hpp"
#include "simac/harness/keyvalue.hpp"

namespace simac::analysis {

struct GradientProfile {
  std::string name;
  std::function<double(int)> g;  // |gradient| as a function of t, >= 0
};

/// step500: 1 below t=500. monotone: linear decay reaching 0 at 600.
/// bump: raised cosine on [0,700) peaking at 350. All are zero on their tails.
inline std::vector<GradientProfile> bundled_profiles(int T = 1000) {
  const double s = static_cast<double>(T) / 1000.0;
  return {
      {"step500", [s](int t) { return t < 500 * s ? 1.0 : 0.0; }},
      {"monotone", [s](int t) { return t < 600 * s ? 1.0 - t / (600.0 * s) : 0.0; }},
      {"bump",
       [s](int t) { return t < 700 * s ? 0.5 * (1.0 - std::cos(2.0 * M_PI * t / (700.0 * s))) + 1e-3 : 0.0; }},
  };
}

inline const GradientProfile& find_profile(const std::vector<GradientProfile>& profiles, const std::string& name) {
  for (auto& p : profiles)
    if (p.name == name) return p;
  throw std::invalid_argument("unknown gradient profile '" + name + "'");
}

struct Theorem1Result {
  std::string profile;
  double e_full = 0.0;          // exact mean of g over [0, T)
  double e_full_sampled = 0.0;  // uniform-sampling estimate of e_full
  std::vector<double> e_selected;
  double mean_selected = 0.0;
  double fraction_greater = 0.0;
};

inline double pool_mean(const attack::TimestepPool& pool, const std::function<double(int)>& g) {
  double s = 0.0;
  for (auto& [lo, hi] : pool.intervals())
    for (int t = lo; t < hi; ++t) s += g(t);
  return s / static_cast<double>(pool.length());
}

inline Theorem1Result theorem1_oracle(const GradientProfile& profile, int T, int seeds, int search_steps = 50,
                                      std::uint64_t base_seed = 0, int full_samples = 100000) {
  Theorem1Result r;
  r.profile = profile.name;
  r.e_full = pool_mean(attack::TimestepPool(T), profile.g);
  Rng sampler(substream_seed(base_seed, "theorem1-full"));
  double acc = 0.0;
  for (int i = 0; i < full_samples; ++i) acc += profile.g(static_cast<int>(sampler.integer(0, T - 1)));
  r.e_full_sampled = acc / full_samples;

  attack::GradientEvaluator eval = [&](int t, const Tensor&) {
    return attack::InputGradient{profile.g(t), Tensor::zeros({1})};
  };
  const Tensor dummy = Tensor::zeros({1});
  int greater = 0;
  for (int k = 0; k < seeds; ++k) {
    Rng rng(substream_seed(base_seed, "theorem1-seed-" + std::to_string(k)));
    auto sel = attack::adaptive_select(T, eval, dummy, search_steps, 0.0, rng);
    const double e = pool_mean(sel.pool, profile.g);
    r.e_selected.push_back(e);
    r.mean_selected += e;
    greater += e > r.e_full;
  }
  if (seeds > 0) {
    r.mean_selected /= seeds;
    r.fraction_greater = static_cast<double>(greater) / seeds;
  }
  return r;
}

inline void write_theorem1_csv(std::ostream& os, const std::vector<Theorem1Result>& results) {
  os << "profile,seeds,e_full,e_full_sampled,e_selected_mean,fraction_greater\n";
  for (auto& r : results)
    os << r.profile << ',' << r.e_selected.size() << ',' << harness::format_double(r.e_full) << ','
       << harness::format_double(r.e_full_sampled) << ',' << harness::format_double(r.mean_selected) << ','
       << harness::format_double(r.fraction_greater) << '\n';
}

}  // namespace simac::analysis
