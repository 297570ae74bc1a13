#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "simac/analysis/freq_residual.hpp"
#include "simac/analysis/gradient_stats.hpp"
#include "simac/analysis/pca.hpp"
#include "simac/analysis/spectrum.hpp"
#include "simac/analysis/theorem1.hpp"
#include "oracles.hpp"

using namespace simac;
using namespace simac::analysis;

namespace {

Tensor randn(Rng& rng, Shape shape) { return rng.normal_tensor(shape); }

void expect_pca_matches_oracle(const Tensor& feature, std::size_t k) {
  const std::size_t P = feature.dim(1) * feature.dim(2);
  const auto cov = oracle::pixel_covariance(feature);
  std::vector<double> vals;
  std::vector<std::vector<double>> vecs;
  oracle::jacobi_eigen(cov, vals, vecs);
  double trace = 0.0;
  for (double v : vals) trace += std::max(v, 0.0);

  const auto got = pca_of(feature, k);
  ASSERT_EQ(got.components.size(), k);
  for (std::size_t i = 0; i < got.eigenvalues.size(); ++i) EXPECT_NEAR(got.eigenvalues[i], std::max(vals[i], 0.0), 1e-9);
  for (std::size_t i = 0; i < k; ++i) {
    EXPECT_NEAR(got.variance_ratios[i], std::max(vals[i], 0.0) / trace, 1e-9);
    if (vals[i] < 1e-9) continue;  // null-space directions are not unique
    double dot = 0.0;
    for (std::size_t p = 0; p < P; ++p) dot += got.components[i][p] * vecs[i][p];
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-9) << "component " << i;
  }
}

}  // namespace

TEST(Spectrum, FftMatchesDirectDft) {
  Rng rng(1);
  for (auto [H, W] : {std::pair<std::size_t, std::size_t>{8, 8}, {32, 32}, {6, 10}, {5, 4}}) {
    const Tensor x = randn(rng, {H, W});
    const auto s = fft2d(x);
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) {
        const auto acc = oracle::dft(x, H, W, u, v);
        EXPECT_LT(std::abs(acc - s.at((u + H / 2) % H, (v + W / 2) % W)), 1e-9);
      }
  }
}

TEST(Spectrum, ParsevalAndRadialConservation) {
  Rng rng(2);
  const Tensor x = randn(rng, {1, 16, 16});
  const auto s = fft2d(x);
  double energy = 0.0, spec = 0.0, amp = 0.0;
  for (double v : x.data()) energy += v * v;
  for (auto& c : s.values) {
    spec += std::norm(c);
    amp += std::abs(c);
  }
  EXPECT_NEAR(spec, 256.0 * energy, 1e-9 * spec);
  EXPECT_NEAR(radial_profile(s).total(), amp, 1e-9);
  EXPECT_NEAR(radial_profile(s, MagnitudeKind::power).total(), spec, 1e-9 * spec);
  EXPECT_NEAR(radial_profile(s, 4).total(), amp, 1e-9);
}

TEST(Spectrum, RingsAndShares) {
  // Constant image: all magnitude at DC.
  const auto dc = radial_profile(fft2d(Tensor::full({8, 8}, 0.7)));
  EXPECT_DOUBLE_EQ(low_frequency_share(dc), 1.0);
  EXPECT_DOUBLE_EQ(high_frequency_share(dc), 0.0);
  // Checkerboard: all magnitude at the Nyquist corner, radius sqrt(32).
  std::vector<double> cb(64);
  for (std::size_t i = 0; i < 64; ++i) cb[i] = ((i / 8 + i % 8) % 2) ? 1.0 : -1.0;
  const auto s = fft2d(Tensor::from({8, 8}, cb));
  const auto prof = radial_profile(s);
  EXPECT_NEAR(prof.max_radius, std::sqrt(32.0), 1e-12);
  EXPECT_EQ(prof.magnitudes.size(), 6u);
  // Nyquist sits at the corner of the centred grid, in the outermost ring.
  EXPECT_NEAR(prof.magnitudes[5], 64.0, 1e-9);
  EXPECT_NEAR(prof.total(), 64.0, 1e-9);
  EXPECT_THROW(fft2d(Tensor::zeros({2, 4, 4})), shape_error);
}

TEST(Spectrum, CheckerboardIsHighFrequency) {
  std::vector<double> cb(64);
  for (std::size_t i = 0; i < 64; ++i) cb[i] = ((i / 8 + i % 8) % 2) ? 1.0 : -1.0;
  const auto prof = radial_profile(fft2d(Tensor::from({8, 8}, cb)));
  EXPECT_NEAR(high_frequency_share(prof), 1.0, 1e-12);
  EXPECT_NEAR(low_frequency_share(prof), 0.0, 1e-12);
}

TEST(Pca, MatchesJacobiEigensolver) {
  Rng rng(3);
  expect_pca_matches_oracle(randn(rng, {12, 3, 3}), 3);  // Gram route
  expect_pca_matches_oracle(randn(rng, {3, 4, 4}), 3);   // rank-deficient, covariance route
  expect_pca_matches_oracle(randn(rng, {8, 2, 5}), 2);
}

TEST(Pca, ComponentsOrthonormalAndRatiosOrdered) {
  Rng rng(4);
  const auto p = pca_of(randn(rng, {10, 4, 4}), 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      const double d = std::inner_product(p.components[a].begin(), p.components[a].end(), p.components[b].begin(), 0.0);
      EXPECT_NEAR(d, a == b ? 1.0 : 0.0, 1e-10);
    }
  EXPECT_GE(p.variance_ratios[0], p.variance_ratios[1]);
  EXPECT_GE(p.variance_ratios[1], p.variance_ratios[2]);
  EXPECT_THROW(pca_of(randn(rng, {2, 4, 4}), 3), std::invalid_argument);
}

TEST(GradientStats, BucketsPartitionTheRange) {
  const auto b = uniform_buckets(1000, 10);
  ASSERT_EQ(b.size(), 10u);
  EXPECT_EQ(b.front(), (std::pair<int, int>{0, 100}));
  EXPECT_EQ(b.back(), (std::pair<int, int>{900, 1000}));
  const auto sched = diffusion::schedule_linear(100);
  Rng init(5);
  diffusion::DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.n_conditions = 2;
  diffusion::Denoiser m(cfg, sched, init);
  Rng rng(6);
  const Tensor x = Tensor::full({1, 8, 8}, 0.5);
  const auto stats = gradient_stats(m, sched, x, 0, uniform_buckets(100, 4), 3, 1e-10, rng);
  ASSERT_EQ(stats.buckets.size(), 4u);
  for (auto& s : stats.buckets) {
    EXPECT_GE(s.max_abs, s.mean_abs);
    EXPECT_GE(s.count_below, 0.0);
    EXPECT_LE(s.count_below, 64.0);
  }
  EXPECT_THROW(gradient_stats(m, sched, x, 0, {{0, 50}}, 1, 1e-10, rng), std::invalid_argument);
}

TEST(FreqResidual, SharesAreFractions) {
  const auto sched = diffusion::schedule_linear(100);
  Rng init(7);
  diffusion::DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.n_conditions = 2;
  diffusion::Denoiser m(cfg, sched, init);
  Rng rng(8);
  const auto res = freq_residual_study(m, sched, Tensor::full({1, 8, 8}, 0.4), 0, {{0, 10}, {70, 80}}, 5, rng);
  ASSERT_EQ(res.size(), 2u);
  for (auto& r : res) {
    EXPECT_GE(r.high_share, 0.0);
    EXPECT_LE(r.high_share + r.low_share, 1.0 + 1e-12);
  }
  EXPECT_THROW(freq_residual_study(m, sched, Tensor::full({1, 8, 8}, 0.4), 0, {{50, 100}}, 1, rng),
               std::out_of_range);
}

TEST(Theorem1, SelectionBeatsFullRangeOnBundledProfiles) {
  for (auto& p : bundled_profiles()) {
    const auto r = theorem1_oracle(p, 1000, 200, 50, 1);
    EXPECT_GE(r.fraction_greater, 0.95) << p.name;
    EXPECT_GT(r.mean_selected, r.e_full) << p.name;
    EXPECT_NEAR(r.e_full_sampled, r.e_full, 0.01) << p.name;
  }
  EXPECT_DOUBLE_EQ(theorem1_oracle(find_profile(bundled_profiles(), "step500"), 1000, 1).e_full, 0.5);
  EXPECT_THROW(find_profile(bundled_profiles(), "nope"), std::invalid_argument);
}
