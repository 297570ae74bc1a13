#pragma once

// 2-D discrete Fourier transform and radial aggregation of its magnitude.

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "simac/tensor.hpp"

namespace simac::analysis {

using cdouble = std::complex<double>;

/// Spectrum with the DC term moved to (H/2, W/2), row-major.
struct Spectrum {
  std::size_t H = 0, W = 0;
  std::vector<cdouble> values;

  const cdouble& at(std::size_t y, std::size_t x) const { return values[y * W + x]; }
};

namespace detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

/// In-place 1-D forward DFT. Radix-2 for powers of two, direct sum otherwise.
inline void dft1d(std::vector<cdouble>& a) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (!is_pow2(n)) {
    std::vector<cdouble> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      cdouble s{};
      for (std::size_t j = 0; j < n; ++j)
        s += a[j] * std::polar(1.0, -2.0 * M_PI * static_cast<double>((k * j) % n) / static_cast<double>(n));
      out[k] = s;
    }
    a = std::move(out);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Exact twiddles per index keep the error independent of n.
        const cdouble w = std::polar(1.0, -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(len));
        const cdouble u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
  }
}

}  // namespace detail

/// Accepts [H,W], [1,H,W] or [1,1,H,W].
inline Spectrum fft2d(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw shape_error("fft2d: need at least 2 dimensions");
  const std::size_t H = s[s.size() - 2], W = s[s.size() - 1];
  if (H * W != x.numel()) throw shape_error("fft2d: expected a single channel image, got " + shape_str(s));
  if (H < 2 || W < 2) throw shape_error("fft2d: H and W must be >= 2");

  std::vector<cdouble> grid(H * W);
  for (std::size_t i = 0; i < H * W; ++i) grid[i] = x.data()[i];
  std::vector<cdouble> line;
  for (std::size_t y = 0; y < H; ++y) {
    line.assign(grid.begin() + y * W, grid.begin() + (y + 1) * W);
    detail::dft1d(line);
    std::copy(line.begin(), line.end(), grid.begin() + y * W);
  }
  line.resize(H);
  for (std::size_t xx = 0; xx < W; ++xx) {
    for (std::size_t y = 0; y < H; ++y) line[y] = grid[y * W + xx];
    detail::dft1d(line);
    for (std::size_t y = 0; y < H; ++y) grid[y * W + xx] = line[y];
  }
  Spectrum out{H, W, std::vector<cdouble>(H * W)};
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t xx = 0; xx < W; ++xx)
      out.values[((y + H / 2) % H) * W + (xx + W / 2) % W] = grid[y * W + xx];
  return out;
}

enum class MagnitudeKind { amplitude, power };

struct RadialSpectrum {
  /// Lower ring radius of each bin; the last bin extends to max_radius.
  std::vector<double> bin_edges;
  std::vector<double> magnitudes;
  double max_radius = 0.0;

  double total() const {
    double s = 0.0;
    for (double m : magnitudes) s += m;
    return s;
  }
};

inline double radius_of(const Spectrum& s, std::size_t y, std::size_t x) {
  const double dy = static_cast<double>(y) - static_cast<double>(s.H / 2);
  const double dx = static_cast<double>(x) - static_cast<double>(s.W / 2);
  return std::sqrt(dy * dy + dx * dx);
}

inline double max_radius_of(const Spectrum& s) {
  double r = 0.0;
  for (std::size_t y = 0; y < s.H; ++y)
    for (std::size_t x = 0; x < s.W; ++x) r = std::max(r, radius_of(s, y, x));
  return r;
}

inline std::size_t ring_count(const Spectrum& s) {
  return static_cast<std::size_t>(std::floor(max_radius_of(s))) + 1;
}

/// Sums |F| (or |F|^2) over integer rings floor(r). With fewer bins than
/// rings, consecutive rings are merged evenly.
inline RadialSpectrum radial_profile(const Spectrum& s, std::size_t n_bins,
                                     MagnitudeKind kind = MagnitudeKind::amplitude) {
  if (n_bins < 1) throw std::invalid_argument("radial_profile: n_bins must be >= 1");
  const std::size_t rings = ring_count(s);
  n_bins = std::min(n_bins, rings);
  RadialSpectrum out;
  out.max_radius = max_radius_of(s);
  out.magnitudes.assign(n_bins, 0.0);
  out.bin_edges.assign(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b)
    out.bin_edges[b] = static_cast<double>((b * rings + n_bins - 1) / n_bins);
  for (std::size_t y = 0; y < s.H; ++y)
    for (std::size_t x = 0; x < s.W; ++x) {
      const auto ring = static_cast<std::size_t>(std::floor(radius_of(s, y, x)));
      const std::size_t bin = ring * n_bins / rings;
      const double a = std::abs(s.at(y, x));
      out.magnitudes[bin] += kind == MagnitudeKind::amplitude ? a : a * a;
    }
  return out;
}

/// Ring-resolution profile (one bin per integer radius).
inline RadialSpectrum radial_profile(const Spectrum& s, MagnitudeKind kind = MagnitudeKind::amplitude) {
  return radial_profile(s, ring_count(s), kind);
}

/// Share of magnitude in bins whose lower edge is at or beyond max_radius / 2.
inline double high_frequency_share(const RadialSpectrum& r) {
  const double total = r.total();
  if (total <= 0.0) return 0.0;
  double high = 0.0;
  for (std::size_t b = 0; b < r.magnitudes.size(); ++b)
    if (r.bin_edges[b] >= r.max_radius / 2.0) high += r.magnitudes[b];
  return high / total;
}

/// Share of magnitude in bins lying entirely below max_radius / 4.
inline double low_frequency_share(const RadialSpectrum& r) {
  const double total = r.total();
  if (total <= 0.0) return 0.0;
  double low = 0.0;
  for (std::size_t b = 0; b < r.magnitudes.size(); ++b) {
    const double upper = b + 1 < r.bin_edges.size() ? r.bin_edges[b + 1] : r.max_radius;
    if (upper <= r.max_radius / 4.0) low += r.magnitudes[b];
  }
  return low / total;
}

/// Elementwise mean of profiles with identical binning.
inline RadialSpectrum average_profiles(const std::vector<RadialSpectrum>& profiles) {
  if (profiles.empty()) throw std::invalid_argument("average_profiles: empty");
  RadialSpectrum out = profiles.front();
  for (std::size_t i = 1; i < profiles.size(); ++i)
    for (std::size_t b = 0; b < out.magnitudes.size(); ++b) out.magnitudes[b] += profiles[i].magnitudes[b];
  for (auto& m : out.magnitudes) m /= static_cast<double>(profiles.size());
  return out;
}

}  // namespace simac::analysis
