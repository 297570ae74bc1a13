#pragma once

// Self-checks run by `simac verify`. Each check is small enough that the whole
// suite finishes in well under a minute.

#include <chrono>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "simac/analysis/pca.hpp"
#include "simac/analysis/spectrum.hpp"
#include "simac/analysis/theorem1.hpp"
#include "simac/attack/protect.hpp"
#include "simac/customize/subjects.hpp"
#include "simac/diffusion/checkpoint.hpp"
#include "simac/grad_check.hpp"
#include "simac/harness/run_config.hpp"

namespace simac::harness {

struct CheckResult {
  std::string name;
  bool ok = false;
  std::string detail;
};

namespace detail {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

inline CheckResult check_gradients(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w1 = detail::random_tensor(rng, {3, 2, 3, 3}, 0.5);
    const Tensor w2 = detail::random_tensor(rng, {2, 5, 3, 3}, 0.5);
    const Tensor x = detail::random_tensor(rng, {1, 2, 6, 6});
    auto fn = [&](const Tensor& in) {
      Tensor h = ops::silu(ops::conv2d(in, w1, 2, 1));
      h = ops::concat_channels(ops::upsample2x(h), in);
      h = ops::conv2d(h, w2, 1, 1);
      return ops::mean(ops::square(h));
    };
    worst = std::max(worst, grad_check(fn, x));
  }
  return {"autodiff_vs_finite_differences", worst < 1e-5, "max rel error " + detail::fmt(worst)};
}

inline CheckResult check_forward_moments(std::uint64_t seed) {
  const auto sched = diffusion::schedule_linear(1000);
  Rng rng(seed);
  const Tensor x0 = Tensor::from({1, 1, 2, 2}, {0.1, 0.4, 0.7, 1.0});
  const int n = 10000;
  double worst = 0.0;
  for (int t : {0, 250, 500, 750, 999}) {
    const double ab = sched.alpha_bars[t];
    std::vector<double> sum(4, 0.0), sq(4, 0.0);
    for (int i = 0; i < n; ++i) {
      const Tensor xt = diffusion::forward_sample(x0, t, rng.normal_tensor(x0.shape()), sched);
      for (int j = 0; j < 4; ++j) {
        sum[j] += xt[j];
        sq[j] += xt[j] * xt[j];
      }
    }
    for (int j = 0; j < 4; ++j) {
      const double mean = sum[j] / n, var = sq[j] / n - mean * mean;
      const double want_mean = std::sqrt(ab) * x0.data()[j], want_var = 1.0 - ab;
      // Mean error is judged against the noise scale, where a relative measure is meaningless.
      worst = std::max(worst, std::abs(mean - want_mean) / std::max(std::abs(want_mean), std::sqrt(want_var)));
      worst = std::max(worst, std::abs(var - want_var) / want_var);
    }
  }
  return {"forward_process_moments", worst < 0.05, "max relative deviation " + detail::fmt(worst)};
}

inline CheckResult check_conv_oracle(std::uint64_t seed) {
  Rng rng(seed);
  const Tensor x = detail::random_tensor(rng, {2, 3, 7, 6});
  const Tensor k = detail::random_tensor(rng, {4, 3, 3, 3});
  double worst = 0.0;
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      const Tensor y = ops::conv2d(x, k, stride, pad);
      const auto Ho = y.dim(2), Wo = y.dim(3);
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
          for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
              double s = 0.0;
              for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t a = 0; a < 3; ++a)
                  for (std::size_t b = 0; b < 3; ++b) {
                    const long yy = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                    const long xx = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                    if (yy < 0 || xx < 0 || yy >= 7 || xx >= 6) continue;
                    s += x.data()[((n * 3 + c) * 7 + yy) * 6 + xx] * k.data()[((o * 3 + c) * 3 + a) * 3 + b];
                  }
              worst = std::max(worst, std::abs(s - y.data()[((n * 4 + o) * Ho + i) * Wo + j]));
            }
    }
  return {"conv2d_vs_direct_loop", worst < 1e-12, "max abs error " + detail::fmt(worst)};
}

inline CheckResult check_fft_oracle(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0, conservation = 0.0;
  for (auto [H, W] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 16}, {6, 10}}) {
    const Tensor x = detail::random_tensor(rng, {H, W});
    const auto s = analysis::fft2d(x);
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) {
        analysis::cdouble acc{};
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xx = 0; xx < W; ++xx)
            acc += x.data()[y * W + xx] *
                   std::polar(1.0, -2.0 * M_PI * (static_cast<double>(u * y) / H + static_cast<double>(v * xx) / W));
        // Centred layout: frequency (u, v) sits at ((u + H/2) mod H, (v + W/2) mod W).
        worst = std::max(worst, std::abs(acc - s.at((u + H / 2) % H, (v + W / 2) % W)));
      }
    double full = 0.0;
    for (auto& c : s.values) full += std::abs(c);
    conservation = std::max(conservation, std::abs(analysis::radial_profile(s).total() - full));
  }
  return {"fft_vs_direct_dft", worst < 1e-9 && conservation < 1e-9,
          "max deviation " + detail::fmt(worst) + ", radial total error " + detail::fmt(conservation)};
}

inline CheckResult check_pca(std::uint64_t seed) {
  Rng rng(seed);
  const auto p = analysis::pca_of(detail::random_tensor(rng, {6, 4, 4}), 3);
  double worst = 0.0;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 16; ++i) dot += p.components[a][i] * p.components[b][i];
      worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
    }
  bool ratios = p.variance_ratios[0] >= p.variance_ratios[1] && p.variance_ratios[1] >= p.variance_ratios[2];
  double sum = 0.0;
  for (double r : p.variance_ratios) {
    ratios = ratios && r >= 0.0 && r <= 1.0;
    sum += r;
  }
  return {"pca_orthonormal", worst < 1e-8 && ratios && sum <= 1.0 + 1e-12,
          "max Gram deviation " + detail::fmt(worst)};
}

inline CheckResult check_config_roundtrip() {
  RunConfig cfg;
  cfg.seed = 42;
  const auto text = config_dump(cfg);
  const auto again = config_dump(parse_run_config(text));
  bool rejects_unknown = false;
  try {
    parse_run_config(text + "no_such_key = 1\n");
  } catch (const config_error&) {
    rejects_unknown = true;
  }
  return {"config_roundtrip", text == again && rejects_unknown, rejects_unknown ? "" : "unknown key accepted"};
}

inline CheckResult check_checkpoint_roundtrip(std::uint64_t seed) {
  Rng rng(seed);
  const auto sched = diffusion::schedule_linear(50);
  diffusion::Denoiser m(diffusion::DenoiserConfig{}, sched, rng);
  std::stringstream ss;
  diffusion::write_checkpoint(ss, m);
  const auto back = diffusion::read_checkpoint(ss);
  const auto a = m.named_tensors(), b = back.named_tensors();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i)
    same = a[i].first == b[i].first && a[i].second.to_vector() == b[i].second.to_vector();
  return {"checkpoint_roundtrip", same, ""};
}

inline CheckResult check_theorem1(std::uint64_t seed) {
  std::string detail;
  bool ok = true;
  for (auto& p : analysis::bundled_profiles()) {
    const auto r = analysis::theorem1_oracle(p, 1000, 40, 50, seed, 1000);
    ok = ok && r.fraction_greater >= 0.95;
    detail += p.name + "=" + detail::fmt(r.fraction_greater) + " ";
  }
  return {"theorem1_selection_gain", ok, detail};
}

/// Short protect run on a tiny untrained model; the budget must hold exactly.
inline CheckResult check_budget(std::uint64_t seed) {
  Rng rng(seed);
  const auto sched = diffusion::schedule_linear(200);
  diffusion::DenoiserConfig dc;
  dc.n_conditions = 4;
  diffusion::Denoiser m(dc, sched, rng);
  customize::SubjectOptions so;
  so.n_train = 2;
  auto subj = customize::synth_subject(rng, 1, so);
  attack::AttackConfig cfg;
  cfg.epochs = 2;
  cfg.surrogate_steps_per_epoch = 1;
  cfg.attack_steps_per_epoch = 6;
  cfg.alpha = 0.02;
  cfg.search_steps = 5;
  cfg.seed = seed;
  const auto res = attack::protect(m, sched, subj.train, 1, cfg);
  return {"perturbation_budget", res.perturbation.satisfies_budget(),
          "max |delta| " + detail::fmt(res.perturbation.max_abs_delta()) + " eta " + detail::fmt(cfg.eta)};
}

inline CheckResult check_combined_loss(std::uint64_t seed) {
  Rng rng(seed);
  const auto sched = diffusion::schedule_linear(100);
  diffusion::Denoiser m(diffusion::DenoiserConfig{}, sched, rng);
  const Tensor clean = Tensor::full({2, 1, 32, 32}, 0.5);
  const Tensor adv = ops::add(clean, detail::random_tensor(rng, clean.shape(), 0.05)).detach();
  const Tensor eps = rng.normal_tensor(clean.shape());
  const auto r = attack::combined_loss(m, sched, adv, clean, 40, eps, 0, 0.7, {4, 5});
  const double err = std::abs(r.total.item() - (r.cond_loss.item() + 0.7 * r.feat_loss.item()));
  return {"combined_loss_additivity", err < 1e-12, "abs error " + detail::fmt(err)};
}

inline std::vector<CheckResult> run_invariant_suite(std::uint64_t seed = 7) {
  std::vector<std::function<CheckResult()>> checks{
      [&] { return check_gradients(seed); },       [&] { return check_forward_moments(seed); },
      [&] { return check_conv_oracle(seed); },     [&] { return check_fft_oracle(seed); },
      [&] { return check_pca(seed); },             [] { return check_config_roundtrip(); },
      [&] { return check_checkpoint_roundtrip(seed); }, [&] { return check_theorem1(seed); },
      [&] { return check_budget(seed); },          [&] { return check_combined_loss(seed); },
  };
  std::vector<CheckResult> out;
  for (auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"(exception)", false, e.what()});
    }
  }
  return out;
}

}  // namespace simac::harness
