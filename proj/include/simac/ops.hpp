#pragma once

// Differentiable operations on simac::Tensor.
//
// Broadcasting is deliberately limited to scalars. Per-channel additions have
// their own named ops so that shape intent is always explicit.

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <vector>

#include "simac/tensor.hpp"

namespace simac::ops {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

inline void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r)
    throw shape_error(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                      shape_str(a.shape()));
}

using simac::detail::make_result;
using simac::detail::Node;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    if (a.requires_grad()) a.node().accumulate(self.grad);
    if (b.requires_grad()) b.node().accumulate(self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    if (a.requires_grad()) a.node().accumulate(self.grad);
    if (b.requires_grad()) {
      auto& g = b.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    if (a.requires_grad()) {
      auto& g = a.node().grad_buffer();
      auto y = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (b.requires_grad()) {
      auto& g = b.node().grad_buffer();
      auto x = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

inline Tensor mul(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return detail::make_result(a.shape(), std::move(out), {a}, [a, s](detail::Node& self) {
    auto& g = a.node().grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

/// Multiplication by a scalar. scale(x, 1) reproduces x bit for bit.
inline Tensor scale(const Tensor& a, double s) { return mul(a, s); }

inline Tensor add(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a](detail::Node& self) { a.node().accumulate(self.grad); });
}

inline Tensor sub(const Tensor& a, double s) { return add(a, -s); }

/// a * sa + b * sb in one node; used by the forward process.
inline Tensor axpby(const Tensor& a, double sa, const Tensor& b, double sb) {
  detail::require_same_shape(a, b, "axpby");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * x[i] + sb * y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b, sa, sb](detail::Node& self) {
    if (a.requires_grad()) {
      auto& g = a.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sa * self.grad[i];
    }
    if (b.requires_grad()) {
      auto& g = b.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sb * self.grad[i];
    }
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::make_result(a.shape(), std::move(out), {a}, [a](detail::Node& self) {
    auto& g = a.node().grad_buffer();
    auto x = a.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

inline Tensor silu(const Tensor& a) {
  std::vector<double> out(a.numel());
  std::vector<double> sig(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    sig[i] = 1.0 / (1.0 + std::exp(-x[i]));
    out[i] = x[i] * sig[i];
  }
  if (!grad_enabled() || !a.requires_grad())
    return detail::make_result(a.shape(), std::move(out), {a}, nullptr);
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a, sig = std::move(sig)](detail::Node& self) {
                               auto& g = a.node().grad_buffer();
                               auto x = a.data();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i] * sig[i] * (1.0 + x[i] * (1.0 - sig[i]));
                             });
}

enum class Activation { relu, silu };

inline Tensor activation(Activation kind, const Tensor& x) {
  return kind == Activation::relu ? relu(x) : silu(x);
}

inline Tensor square(const Tensor& a) { return mul(a, a); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), {a},
                             [a](detail::Node& self) { a.node().accumulate(self.grad); });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  auto x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  return detail::make_result({1}, {s}, {a}, [a](detail::Node& self) {
    auto& g = a.node().grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  auto x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  const double n = static_cast<double>(a.numel());
  return detail::make_result({1}, {s / n}, {a}, [a, n](detail::Node& self) {
    auto& g = a.node().grad_buffer();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

/// Mean of squared differences.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  auto x = a.data(), y = b.data();
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return detail::make_result({1}, {s / n}, {a, b}, [a, b, n](detail::Node& self) {
    auto x = a.data(), y = b.data();
    const double k = 2.0 * self.grad[0] / n;
    if (a.requires_grad()) {
      auto& g = a.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (x[i] - y[i]);
    }
    if (b.requires_grad()) {
      auto& g = b.node().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (x[i] - y[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [M,K] x [K,N] -> [M,N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw shape_error("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  std::vector<double> out(m * n);
  MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  return detail::make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](detail::Node& self) {
    CMap go(self.grad.data(), m, n);
    if (a.requires_grad())
      MMap(a.node().grad_buffer().data(), m, k).noalias() += go * CMap(b.data().data(), k, n).transpose();
    if (b.requires_grad())
      MMap(b.node().grad_buffer().data(), k, n).noalias() += CMap(a.data().data(), m, k).transpose() * go;
  });
}

/// Adds a [C] vector to every position of channel c in an NCHW tensor.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 4, "add_channel_bias");
  const auto N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (bias.numel() != C)
    throw shape_error("add_channel_bias: bias has " + std::to_string(bias.numel()) +
                      " entries for " + std::to_string(C) + " channels");
  std::vector<double> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* p = out.data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) p[i] += b[c];
    }
  return detail::make_result(x.shape(), std::move(out), {x, bias},
                             [x, bias, N, C, HW](detail::Node& self) {
                               if (x.requires_grad()) x.node().accumulate(self.grad);
                               if (bias.requires_grad()) {
                                 auto& g = bias.node().grad_buffer();
                                 for (std::size_t n = 0; n < N; ++n)
                                   for (std::size_t c = 0; c < C; ++c) {
                                     const double* p = self.grad.data() + (n * C + c) * HW;
                                     double s = 0.0;
                                     for (std::size_t i = 0; i < HW; ++i) s += p[i];
                                     g[c] += s;
                                   }
                               }
                             });
}

/// Adds a per-sample [N,C] vector across the spatial extent of an NCHW tensor.
inline Tensor add_channel_vector(const Tensor& x, const Tensor& v) {
  detail::require_rank(x, 4, "add_channel_vector");
  const auto N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (v.rank() != 2 || v.dim(0) != N || v.dim(1) != C)
    throw shape_error("add_channel_vector: expected [" + std::to_string(N) + "," +
                      std::to_string(C) + "], got " + shape_str(v.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto vv = v.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double* p = out.data() + nc * HW;
    for (std::size_t i = 0; i < HW; ++i) p[i] += vv[nc];
  }
  return detail::make_result(x.shape(), std::move(out), {x, v}, [x, v, N, C, HW](detail::Node& self) {
    if (x.requires_grad()) x.node().accumulate(self.grad);
    if (v.requires_grad()) {
      auto& g = v.node().grad_buffer();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* p = self.grad.data() + nc * HW;
        double s = 0.0;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
        g[nc] += s;
      }
    }
  });
}

/// Adds a [D] vector to every row of an [N,D] matrix.
inline Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  detail::require_rank(x, 2, "add_row_vector");
  const auto N = x.dim(0), D = x.dim(1);
  if (v.numel() != D) throw shape_error("add_row_vector: width mismatch");
  std::vector<double> out(x.data().begin(), x.data().end());
  auto vv = v.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) out[n * D + d] += vv[d];
  return detail::make_result(x.shape(), std::move(out), {x, v}, [x, v, N, D](detail::Node& self) {
    if (x.requires_grad()) x.node().accumulate(self.grad);
    if (v.requires_grad()) {
      auto& g = v.node().grad_buffer();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < D; ++d) g[d] += self.grad[n * D + d];
    }
  });
}

/// Selects rows of a [S,D] table. A negative id yields a zero row.
inline Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  detail::require_rank(table, 2, "gather_rows");
  const auto S = table.dim(0), D = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * D, 0.0);
  auto t = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    if (static_cast<std::size_t>(idx[r]) >= S)
      throw shape_error("gather_rows: id " + std::to_string(idx[r]) + " outside table of " +
                        std::to_string(S) + " rows");
    std::copy_n(t.data() + idx[r] * D, D, out.data() + r * D);
  }
  return detail::make_result({idx.size(), D}, std::move(out), {table},
                             [table, idx, D](detail::Node& self) {
                               auto& g = table.node().grad_buffer();
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 if (idx[r] < 0) continue;
                                 for (std::size_t d = 0; d < D; ++d)
                                   g[idx[r] * D + d] += self.grad[r * D + d];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Convolution and spatial ops

struct Conv2dGeometry {
  std::size_t N, C, H, W, O, kH, kW, stride, pad, Ho, Wo;
};

inline Conv2dGeometry conv2d_geometry(const Tensor& input, const Tensor& kernel, std::size_t stride,
                                      std::size_t pad) {
  detail::require_rank(input, 4, "conv2d");
  detail::require_rank(kernel, 4, "conv2d");
  if (stride < 1) throw shape_error("conv2d: stride must be >= 1");
  Conv2dGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                   kernel.dim(2), kernel.dim(3), stride, pad, 0, 0};
  if (kernel.dim(1) != g.C)
    throw shape_error("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                      " input channels, input has " + std::to_string(g.C));
  if (g.kH > g.H + 2 * pad || g.kW > g.W + 2 * pad)
    throw shape_error("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                      shape_str(input.shape()));
  g.Ho = (g.H + 2 * pad - g.kH) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.kW) / stride + 1;
  return g;
}

namespace detail {

// Column buffer of shape [C*kH*kW, Ho*Wo] for one image.
inline void im2col(const double* img, const Conv2dGeometry& g, double* col) {
  const std::size_t P = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.kH; ++ky)
      for (std::size_t kx = 0; kx < g.kW; ++kx) {
        double* row = col + ((c * g.kH + ky) * g.kW + kx) * P;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= static_cast<long>(g.H)) {
            std::fill_n(dst, g.Wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.W)) ? 0.0 : src[ix];
          }
        }
      }
}

inline void col2im_add(const double* col, const Conv2dGeometry& g, double* img) {
  const std::size_t P = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.kH; ++ky)
      for (std::size_t kx = 0; kx < g.kW; ++kx) {
        const double* row = col + ((c * g.kH + ky) * g.kW + kx) * P;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          double* dst = img + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          const double* src = row + oy * g.Wo;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.W)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation, NCHW input, OIHW kernel, zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
                     std::size_t pad = 0) {
  const auto g = conv2d_geometry(input, kernel, stride, pad);
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  const std::size_t K = g.C * g.kH * g.kW, P = g.Ho * g.Wo;
  std::vector<double> out(g.N * g.O * P);
  std::vector<double> col(K * P);
  CMap w(kernel.data().data(), g.O, K);
  for (std::size_t n = 0; n < g.N; ++n) {
    detail::im2col(input.data().data() + n * g.C * g.H * g.W, g, col.data());
    MMap(out.data() + n * g.O * P, g.O, P).noalias() = w * CMap(col.data(), K, P);
  }
  return detail::make_result(
      {g.N, g.O, g.Ho, g.Wo}, std::move(out), {input, kernel},
      [input, kernel, g, K, P](detail::Node& self) {
        std::vector<double> col(K * P);
        CMap w(kernel.data().data(), g.O, K);
        double* gk = kernel.requires_grad() ? kernel.node().grad_buffer().data() : nullptr;
        double* gi = input.requires_grad() ? input.node().grad_buffer().data() : nullptr;
        for (std::size_t n = 0; n < g.N; ++n) {
          CMap go(self.grad.data() + n * g.O * P, g.O, P);
          if (gk) {
            detail::im2col(input.data().data() + n * g.C * g.H * g.W, g, col.data());
            MMap(gk, g.O, K).noalias() += go * CMap(col.data(), K, P).transpose();
          }
          if (gi) {
            MMap(col.data(), K, P).noalias() = w.transpose() * go;
            detail::col2im_add(col.data(), g, gi + n * g.C * g.H * g.W);
          }
        }
      });
}

/// Nearest-neighbour 2x upsampling of an NCHW tensor.
inline Tensor upsample2x(const Tensor& x) {
  detail::require_rank(x, 4, "upsample2x");
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<double> out(N * C * 4 * H * W);
  auto in = x.data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx)
        out[(nc * 2 * H + y) * 2 * W + xx] = in[(nc * H + y / 2) * W + xx / 2];
  return detail::make_result({N, C, 2 * H, 2 * W}, std::move(out), {x},
                             [x, N, C, H, W](detail::Node& self) {
                               auto& g = x.node().grad_buffer();
                               for (std::size_t nc = 0; nc < N * C; ++nc)
                                 for (std::size_t y = 0; y < 2 * H; ++y)
                                   for (std::size_t xx = 0; xx < 2 * W; ++xx)
                                     g[(nc * H + y / 2) * W + xx / 2] +=
                                         self.grad[(nc * 2 * H + y) * 2 * W + xx];
                             });
}

/// Concatenates two NCHW tensors along the channel axis.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 4, "concat_channels");
  detail::require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw shape_error("concat_channels: incompatible " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const auto N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  std::vector<double> out(N * (Ca + Cb) * HW);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + n * Ca * HW, Ca * HW, out.data() + n * (Ca + Cb) * HW);
    std::copy_n(b.data().data() + n * Cb * HW, Cb * HW, out.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  return detail::make_result({N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                             [a, b, N, Ca, Cb, HW](detail::Node& self) {
                               for (std::size_t n = 0; n < N; ++n) {
                                 const double* src = self.grad.data() + n * (Ca + Cb) * HW;
                                 if (a.requires_grad()) {
                                   double* g = a.node().grad_buffer().data() + n * Ca * HW;
                                   for (std::size_t i = 0; i < Ca * HW; ++i) g[i] += src[i];
                                 }
                                 if (b.requires_grad()) {
                                   double* g = b.node().grad_buffer().data() + n * Cb * HW;
                                   for (std::size_t i = 0; i < Cb * HW; ++i) g[i] += src[Ca * HW + i];
                                 }
                               }
                             });
}

/// NCHW -> [N,C] spatial mean.
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const auto N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * C, 0.0);
  auto in = x.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += in[nc * HW + i];
    out[nc] = s / static_cast<double>(HW);
  }
  return detail::make_result({N, C}, std::move(out), {x}, [x, N, C, HW](detail::Node& self) {
    auto& g = x.node().grad_buffer();
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t i = 0; i < HW; ++i) g[nc * HW + i] += self.grad[nc] / static_cast<double>(HW);
  });
}

/// Mean negative log-likelihood of integer labels under softmax(logits), logits [N,K].
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const auto N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N) throw shape_error("cross_entropy: label count mismatch");
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> prob(N * K);
  auto z = logits.data();
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (lab[n] < 0 || static_cast<std::size_t>(lab[n]) >= K)
      throw shape_error("cross_entropy: label out of range");
    double mx = z[n * K];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[n * K + k]);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[n * K + k] - mx);
    for (std::size_t k = 0; k < K; ++k) prob[n * K + k] = std::exp(z[n * K + k] - mx) / s;
    loss -= z[n * K + lab[n]] - mx - std::log(s);
  }
  return detail::make_result({1}, {loss / static_cast<double>(N)}, {logits},
                             [logits, lab, prob = std::move(prob), N, K](detail::Node& self) {
                               auto& g = logits.node().grad_buffer();
                               const double k = self.grad[0] / static_cast<double>(N);
                               for (std::size_t n = 0; n < N; ++n)
                                 for (std::size_t j = 0; j < K; ++j)
                                   g[n * K + j] += k * (prob[n * K + j] -
                                                        (static_cast<int>(j) == lab[n] ? 1.0 : 0.0));
                             });
}

}  // namespace simac::ops
