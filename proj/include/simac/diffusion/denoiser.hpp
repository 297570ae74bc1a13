#pragma once

// Small encoder/decoder noise predictor eps_theta(x_t, t, c).
//
//   x [1,32,32]
//   enc0  conv s2 -> [8,16,16]      enc1 conv s2 -> [16,8,8]     enc2 conv s2 -> [32,4,4]
//   dec0  conv        [32,4,4]
//   dec1  up + enc1 skip -> [16,8,8]    dec2 conv [16,8,8]
//   dec3  up + enc0 skip -> [8,16,16]   dec4 conv [8,16,16]
//   dec5  up + sqrt(abar_t) * x skip -> [8,32,32]
//   head  conv -> v [1,32,32]
//   eps_hat = sqrt(1 - abar_t) * x_t + sqrt(abar_t) * v
//
// The head predicts v = sqrt(abar_t) * eps - sqrt(1 - abar_t) * x0, so at
// large t the network estimates image structure instead of copying the noise
// of x_t. The full resolution skip is scaled the same way: it carries detail
// while the signal dominates and fades once x_t is mostly noise.
//
// Every stage adds a projection of the timestep (+ condition) embedding right
// after its convolution. Decoder outputs dec0..dec5 are the feature taps.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "simac/diffusion/schedule.hpp"
#include "simac/ops.hpp"
#include "simac/rng.hpp"
#include "simac/tensor.hpp"

namespace simac::diffusion {

/// Decoder layer index -> that layer's output for one forward pass.
using FeatureSet = std::map<int, Tensor>;

struct DenoiserConfig {
  std::size_t image_size = 32;
  std::size_t image_channels = 1;
  std::array<std::size_t, 3> widths{8, 16, 32};
  std::size_t embed_dim = 32;
  /// Number of learned subject condition slots.
  std::size_t n_conditions = 32;
};

inline constexpr int kDecoderLayers = 6;
/// Condition id meaning "no subject"; maps to the zero embedding.
inline constexpr int kUnconditional = -1;

/// Sinusoidal embedding of integer timesteps, [N, dim].
inline Tensor timestep_embedding(const std::vector<int>& ts, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<double> v(ts.size() * dim);
  for (std::size_t n = 0; n < ts.size(); ++n)
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      v[n * dim + k] = std::sin(ts[n] * freq);
      v[n * dim + half + k] = std::cos(ts[n] * freq);
    }
  return Tensor::from({ts.size(), dim}, std::move(v));
}

class Denoiser {
 public:
  using NamedParams = std::vector<std::pair<std::string, Tensor>>;

  Denoiser() = default;

  Denoiser(const DenoiserConfig& cfg, const NoiseSchedule& sched, Rng& rng) : cfg_(cfg) {
    const auto T = static_cast<std::size_t>(sched.T);
    std::vector<double> skip(T), scale(T);
    for (std::size_t t = 0; t < T; ++t) {
      skip[t] = std::sqrt(1.0 - sched.alpha_bars[t]);
      scale[t] = std::sqrt(sched.alpha_bars[t]);
    }
    buffers_.emplace_back("input_skip", Tensor::from({T}, std::move(skip)));
    buffers_.emplace_back("output_scale", Tensor::from({T}, std::move(scale)));
    const auto [w0, w1, w2] = cfg.widths;
    const auto c = cfg.image_channels;
    const auto e = cfg.embed_dim;
    add_param("cond_table", Tensor::zeros({cfg.n_conditions, e}));
    add_param("time.w", init({e, e}, e, rng));
    add_param("time.b", Tensor::zeros({e}));
    const std::array<std::pair<std::size_t, std::size_t>, 9> convs{{
        {c, w0}, {w0, w1}, {w1, w2},       // encoder
        {w2, w2}, {w2 + w1, w1}, {w1, w1},  // decoder, low resolution
        {w1 + w0, w0}, {w0, w0}, {w0 + c, w0},
    }};
    for (std::size_t i = 0; i < convs.size(); ++i) {
      const auto [in, out] = convs[i];
      const auto name = stage_name(i);
      add_param(name + ".w", init({out, in, 3, 3}, in * 9, rng));
      add_param(name + ".b", Tensor::zeros({out}));
      add_param(name + ".emb", init({e, out}, e, rng, 0.5));
    }
    add_param("head.w", init({c, w0, 3, 3}, w0 * 9, rng, 0.1));
    add_param("head.b", Tensor::zeros({c}));
  }

  /// Rebuilds a model from named tensors; shapes determine the configuration.
  static Denoiser from_tensors(NamedParams tensors) {
    Denoiser d;
    for (auto& [name, t] : tensors) {
      if (name == "input_skip" || name == "output_scale")
        d.buffers_.emplace_back(name, t);
      else
        d.add_param(name, t);
    }
    const auto& cond = d.param("cond_table");
    d.cfg_.n_conditions = cond.dim(0);
    d.cfg_.embed_dim = cond.dim(1);
    d.cfg_.widths = {d.param("enc0.w").dim(0), d.param("enc1.w").dim(0), d.param("enc2.w").dim(0)};
    d.cfg_.image_channels = d.param("enc0.w").dim(1);
    d.validate();
    return d;
  }

  const DenoiserConfig& config() const { return cfg_; }
  /// Trainable parameters.
  const NamedParams& named_parameters() const { return params_; }
  /// Parameters followed by fixed buffers, in checkpoint order.
  NamedParams named_tensors() const {
    NamedParams out = params_;
    out.insert(out.end(), buffers_.begin(), buffers_.end());
    return out;
  }
  /// Number of timesteps the model was built for.
  std::size_t timesteps() const { return buffer("input_skip").numel(); }
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [n, t] : params_) out.push_back(t);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : params_) n += t.numel();
    return n;
  }

  const Tensor& param(const std::string& name) const {
    for (auto& [n, t] : params_)
      if (n == name) return t;
    throw std::out_of_range("no parameter named " + name);
  }

  const Tensor& buffer(const std::string& name) const {
    for (auto& [n, t] : buffers_)
      if (n == name) return t;
    throw std::out_of_range("no buffer named " + name);
  }

  /// Deep copy with fresh parameter leaves.
  Denoiser clone() const {
    Denoiser d;
    d.cfg_ = cfg_;
    for (auto& [n, t] : params_) d.params_.emplace_back(n, t.clone(true));
    d.buffers_ = buffers_;
    return d;
  }

  void set_trainable(bool on) {
    for (auto& [n, t] : params_) {
      t.set_requires_grad(on);
      t.zero_grad();
    }
  }

  /// eps_hat for a batch x [N,C,H,W]. `ts` and `conds` carry one entry per row.
  /// Decoder outputs are written to `taps` when it is non-null.
  Tensor forward(const Tensor& x, const std::vector<int>& ts, const std::vector<int>& conds,
                 FeatureSet* taps = nullptr) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.image_channels)
      throw shape_error("Denoiser: expected [N," + std::to_string(cfg_.image_channels) + ",H,W], got " +
                        shape_str(x.shape()));
    if (ts.size() != x.dim(0) || conds.size() != x.dim(0))
      throw shape_error("Denoiser: need one timestep and condition per batch row");
    if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0)
      throw shape_error("Denoiser: spatial extents must be divisible by 8");
    const auto skip = buffer("input_skip").data();
    const auto scale = buffer("output_scale").data();
    for (int t : ts)
      if (t < 0 || static_cast<std::size_t>(t) >= skip.size())
        throw std::out_of_range("Denoiser: timestep " + std::to_string(t) + " outside the model's schedule");

    // Broadcasts a per-timestep coefficient over each row of the batch.
    auto per_row = [&](std::span<const double> coef) {
      const std::size_t per = x.numel() / x.dim(0);
      std::vector<double> v(x.numel());
      for (std::size_t n = 0; n < ts.size(); ++n) std::fill_n(v.begin() + n * per, per, coef[ts[n]]);
      return Tensor::from(x.shape(), std::move(v));
    };

    Tensor emb = timestep_embedding(ts, cfg_.embed_dim);
    emb = ops::add(emb, ops::gather_rows(param("cond_table"), conds));
    emb = ops::silu(ops::add_row_vector(ops::matmul(emb, param("time.w")), param("time.b")));

    auto stage = [&](std::size_t i, const Tensor& in, std::size_t stride) {
      const auto name = stage_name(i);
      Tensor h = ops::conv2d(in, param(name + ".w"), stride, 1);
      h = ops::add_channel_bias(h, param(name + ".b"));
      h = ops::add_channel_vector(h, ops::matmul(emb, param(name + ".emb")));
      return ops::silu(h);
    };

    Tensor e0 = stage(0, x, 2);
    Tensor e1 = stage(1, e0, 2);
    Tensor e2 = stage(2, e1, 2);

    std::array<Tensor, kDecoderLayers> f;
    f[0] = stage(3, e2, 1);
    f[1] = stage(4, ops::concat_channels(ops::upsample2x(f[0]), e1), 1);
    f[2] = stage(5, f[1], 1);
    f[3] = stage(6, ops::concat_channels(ops::upsample2x(f[2]), e0), 1);
    f[4] = stage(7, f[3], 1);
    f[5] = stage(8, ops::concat_channels(ops::upsample2x(f[4]), ops::mul(x, per_row(scale))), 1);

    if (taps) {
      taps->clear();
      for (int l = 0; l < kDecoderLayers; ++l) taps->emplace(l, f[l]);
    }
    Tensor v = ops::conv2d(f[5], param("head.w"), 1, 1);
    v = ops::add_channel_bias(v, param("head.b"));
    return ops::add(ops::mul(x, per_row(skip)), ops::mul(v, per_row(scale)));
  }

 private:
  static std::string stage_name(std::size_t i) {
    return i < 3 ? "enc" + std::to_string(i) : "dec" + std::to_string(i - 3);
  }

  static Tensor init(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
    const double sd = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sd * rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
  }

  void add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, std::move(t));
  }

  void validate() const {
    if (buffer("input_skip").numel() != buffer("output_scale").numel())
      throw shape_error("Denoiser: schedule buffers disagree in length");
    const char* required[] = {"cond_table", "time.w", "time.b", "head.w", "head.b"};
    for (auto* r : required) (void)param(r);
    for (std::size_t i = 0; i < 9; ++i) {
      (void)param(stage_name(i) + ".w");
      (void)param(stage_name(i) + ".b");
      (void)param(stage_name(i) + ".emb");
    }
  }

  DenoiserConfig cfg_;
  NamedParams params_;
  NamedParams buffers_;
};

}  // namespace simac::diffusion
