#pragma once

// PCA of decoder feature maps: channels are observations, spatial positions
// are variables. The leading principal directions are spatial maps.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "simac/diffusion/denoiser.hpp"
#include "simac/harness/keyvalue.hpp"

namespace simac::analysis {

struct LayerPca {
  int layer = 0;
  std::size_t H = 0, W = 0, channels = 0;
  std::vector<std::vector<double>> components;  // k maps of H*W, orthonormal
  std::vector<double> variance_ratios;          // k, non-increasing
  std::vector<double> eigenvalues;              // leading eigenvalues, descending
};

struct PcaMap {
  std::vector<LayerPca> layers;
};

namespace detail {

using MatX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void fix_sign(std::vector<double>& v) {
  auto it = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  if (it != v.end() && *it < 0.0)
    for (auto& x : v) x = -x;
}

}  // namespace detail

/// PCA of one [C,H,W] (or [1,C,H,W]) feature tensor.
inline LayerPca pca_of(const Tensor& feature, std::size_t k = 3) {
  const auto& s = feature.shape();
  if (s.size() < 3) throw shape_error("pca_of: expected [C,H,W] feature");
  const std::size_t C = s[s.size() - 3], H = s[s.size() - 2], W = s[s.size() - 1], P = H * W;
  if (C < k) throw std::invalid_argument("pca_of: " + std::to_string(C) + " channels cannot give " +
                                         std::to_string(k) + " components");
  detail::MatX X = Eigen::Map<const detail::MatX>(feature.data().data(), C, P);
  X.rowwise() -= X.colwise().mean();
  const double denom = C > 1 ? static_cast<double>(C - 1) : 1.0;

  LayerPca out;
  out.H = H;
  out.W = W;
  out.channels = C;
  // Small Gram matrix first; the HW x HW covariance is only needed when the
  // centred data has rank below k.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram((X * X.transpose()) / denom);
  Eigen::VectorXd gvals = gram.eigenvalues().reverse();
  Eigen::MatrixXd gvecs = gram.eigenvectors().rowwise().reverse();
  const double top = std::max(gvals.size() ? gvals(0) : 0.0, 0.0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < gvals.size(); ++i)
    if (gvals(i) > 1e-12 * std::max(top, 1e-300)) ++rank;

  double trace = 0.0;
  for (Eigen::Index i = 0; i < gvals.size(); ++i) trace += std::max(gvals(i), 0.0);

  if (rank >= k) {
    for (std::size_t i = 0; i < std::min<std::size_t>(C, P); ++i) out.eigenvalues.push_back(std::max(gvals(i), 0.0));
    for (std::size_t i = 0; i < k; ++i) {
      Eigen::VectorXd v = X.transpose() * gvecs.col(static_cast<Eigen::Index>(i));
      v.normalize();
      out.components.emplace_back(v.data(), v.data() + v.size());
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> cov((X.transpose() * X) / denom);
    Eigen::VectorXd vals = cov.eigenvalues().reverse();
    Eigen::MatrixXd vecs = cov.eigenvectors().rowwise().reverse();
    for (std::size_t i = 0; i < std::min<std::size_t>(C, P); ++i) out.eigenvalues.push_back(std::max(vals(i), 0.0));
    for (std::size_t i = 0; i < k; ++i) {
      Eigen::VectorXd v = vecs.col(static_cast<Eigen::Index>(i));
      out.components.emplace_back(v.data(), v.data() + v.size());
    }
  }
  for (auto& c : out.components) detail::fix_sign(c);
  for (std::size_t i = 0; i < k; ++i) out.variance_ratios.push_back(trace > 0.0 ? out.eigenvalues[i] / trace : 0.0);
  return out;
}

inline PcaMap pca_features(const diffusion::FeatureSet& feats, const std::vector<int>& layers, std::size_t k = 3) {
  PcaMap map;
  for (int l : layers) {
    auto it = feats.find(l);
    if (it == feats.end()) throw std::out_of_range("pca_features: layer " + std::to_string(l) + " not captured");
    auto p = pca_of(it->second, k);
    p.layer = l;
    map.layers.push_back(std::move(p));
  }
  return map;
}

/// Plain (P5) PGM of a component map, min-max scaled to 0..255.
inline void write_pgm(std::ostream& os, const std::vector<double>& map, std::size_t H, std::size_t W) {
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const double span = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
  os << "P5\n" << W << ' ' << H << "\n255\n";
  for (double v : map) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (v - *lo) / span))));
}

inline void write_pca_csv(std::ostream& os, const PcaMap& map, int t) {
  os << "t,layer,height,width,channels,component,variance_ratio,eigenvalue\n";
  for (auto& l : map.layers)
    for (std::size_t i = 0; i < l.components.size(); ++i)
      os << t << ',' << l.layer << ',' << l.H << ',' << l.W << ',' << l.channels << ',' << i << ','
         << harness::format_double(l.variance_ratios[i]) << ',' << harness::format_double(l.eigenvalues[i]) << '\n';
}

}  // namespace simac::analysis
