#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "simac/diffusion/checkpoint.hpp"
#include "simac/diffusion/training.hpp"
#include "simac/grad_check.hpp"

using namespace simac;
using namespace simac::diffusion;

namespace {

Denoiser small_model(const NoiseSchedule& sched, std::uint64_t seed = 1, std::size_t size = 16) {
  Rng rng(seed);
  DenoiserConfig cfg;
  cfg.image_size = size;
  cfg.n_conditions = 4;
  return Denoiser(cfg, sched, rng);
}

Tensor ramp_images(std::size_t n, std::size_t size) {
  std::vector<double> v(n * size * size);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % (size * size)) / (size * size);
  return Tensor::from({n, 1, size, size}, std::move(v));
}

}  // namespace

TEST(Schedule, LinearBetasAndCumulativeProduct) {
  const auto s = schedule_linear(1000);
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_NEAR(s.betas.back(), 0.02, 1e-15);
  // Independent route: exp of the summed log alphas.
  double log_sum = 0.0;
  for (int t = 0; t < 1000; ++t) {
    log_sum += std::log1p(-(1e-4 + (0.02 - 1e-4) * t / 999.0));
    EXPECT_NEAR(s.alpha_bars[t], std::exp(log_sum), 1e-12 * std::max(1.0, std::exp(log_sum)) + 1e-15);
    if (t) {
      EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
    }
  }
  EXPECT_THROW(schedule_linear(1), std::invalid_argument);
  EXPECT_THROW(s.check_t(1000), std::out_of_range);
}

TEST(ForwardProcess, MonteCarloMomentsMatchClosedForm) {
  const auto sched = schedule_linear(1000);
  Rng rng(2);
  const Tensor x0 = Tensor::from({1, 1, 1, 3}, {0.05, 0.5, 0.95});
  for (int t : {0, 100, 400, 800, 999}) {
    const double ab = sched.alpha_bars[t];
    const int n = 10000;
    std::vector<double> sum(3), sq(3);
    for (int i = 0; i < n; ++i) {
      const auto xt = forward_sample(x0, t, rng.normal_tensor(x0.shape()), sched);
      for (int j = 0; j < 3; ++j) {
        sum[j] += xt[j];
        sq[j] += xt[j] * xt[j];
      }
    }
    for (int j = 0; j < 3; ++j) {
      const double mean = sum[j] / n, var = sq[j] / n - mean * mean;
      const double want_mean = std::sqrt(ab) * x0[j];
      EXPECT_LT(std::abs(var - (1 - ab)) / (1 - ab), 0.05) << "t=" << t;
      EXPECT_LT(std::abs(mean - want_mean), 0.05 * std::max(want_mean, std::sqrt(1 - ab))) << "t=" << t;
    }
  }
}

TEST(ForwardProcess, BatchedMatchesPerRow) {
  const auto sched = schedule_linear(100);
  Rng rng(3);
  const Tensor x0 = rng.normal_tensor({2, 1, 4, 4}), eps = rng.normal_tensor({2, 1, 4, 4});
  const auto both = forward_sample(x0, std::vector<int>{10, 90}, eps, sched);
  const auto a = unstack_images(x0), e = unstack_images(eps);
  const auto r0 = forward_sample(stack_images({a[0]}), 10, stack_images({e[0]}), sched);
  const auto r1 = forward_sample(stack_images({a[1]}), 90, stack_images({e[1]}), sched);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(both[i], r0[i], 1e-15);
    EXPECT_NEAR(both[16 + i], r1[i], 1e-15);
  }
}

TEST(Denoiser, ShapesAndDecoderTaps) {
  const auto sched = schedule_linear(50);
  const auto m = small_model(sched);
  FeatureSet f;
  const auto y = m.forward(ramp_images(2, 16), {3, 40}, {0, kUnconditional}, &f);
  EXPECT_EQ(y.shape(), (Shape{2, 1, 16, 16}));
  ASSERT_EQ(f.size(), static_cast<std::size_t>(kDecoderLayers));
  EXPECT_EQ(f.at(0).shape(), (Shape{2, 32, 2, 2}));
  EXPECT_EQ(f.at(5).shape(), (Shape{2, 8, 16, 16}));
  EXPECT_EQ(m.timesteps(), 50u);
  EXPECT_THROW(m.forward(ramp_images(1, 16), {50}, {0}), std::out_of_range);
  EXPECT_THROW(m.forward(Tensor::zeros({1, 2, 16, 16}), {0}, {0}), shape_error);
}

TEST(Denoiser, InputGradientMatchesFiniteDifferences) {
  const auto sched = schedule_linear(50);
  const auto m = small_model(sched, 4, 8);
  Rng rng(5);
  const Tensor eps = rng.normal_tensor({1, 1, 8, 8});
  auto fn = [&](const Tensor& x) { return training_loss(m, sched, x, 7, eps, 1); };
  EXPECT_LT(grad_check(fn, ramp_images(1, 8)), 1e-5);
}

TEST(Denoiser, ParametersExcludeScheduleBuffers) {
  const auto sched = schedule_linear(50);
  const auto m = small_model(sched);
  const auto p = m.named_parameters();
  const auto all = m.named_tensors();
  EXPECT_EQ(all.size(), p.size() + 2);
  for (auto& [name, t] : p) {
    EXPECT_NE(name, "input_skip");
    EXPECT_NE(name, "output_scale");
  }
  EXPECT_NEAR(m.buffer("input_skip")[10], std::sqrt(1 - sched.alpha_bars[10]), 1e-15);
  EXPECT_NEAR(m.buffer("output_scale")[10], std::sqrt(sched.alpha_bars[10]), 1e-15);
}

TEST(Checkpoint, RoundTripPreservesOutputsBitForBit) {
  const auto sched = schedule_linear(50);
  const auto m = small_model(sched);
  std::stringstream ss;
  write_checkpoint(ss, m);
  ASSERT_EQ(ss.str().substr(0, 4), "DNZ1");
  const auto back = read_checkpoint(ss);
  const auto x = ramp_images(1, 16);
  EXPECT_EQ(m.forward(x, {9}, {2}).to_vector(), back.forward(x, {9}, {2}).to_vector());
  EXPECT_EQ(back.parameter_count(), m.parameter_count());
}

TEST(Checkpoint, RejectsCorruptStreams) {
  std::stringstream bad("NOPE");
  EXPECT_THROW(read_checkpoint(bad), io::format_error);
  const auto sched = schedule_linear(50);
  std::stringstream ss;
  write_checkpoint(ss, small_model(sched));
  std::stringstream cut(ss.str().substr(0, ss.str().size() / 2));
  EXPECT_THROW(read_checkpoint(cut), io::format_error);
}

TEST(Training, IdenticalSeedsGiveIdenticalParameters) {
  const auto sched = schedule_linear(100);
  const auto images = unstack_images(ramp_images(3, 16));
  TrainOptions opt;
  opt.steps = 15;
  opt.batch_size = 2;
  opt.seed = 11;
  opt.cond_dropout = 0.3;
  auto a = small_model(sched), b = small_model(sched);
  const ImageSet data{images, {0, 1, 2}};
  train(a, sched, data, opt);
  train(b, sched, data, opt);
  for (std::size_t i = 0; i < a.named_parameters().size(); ++i)
    EXPECT_EQ(a.named_parameters()[i].second.to_vector(), b.named_parameters()[i].second.to_vector());
}

TEST(Training, LossFallsOnTinyDataset) {
  const auto sched = schedule_linear(100);
  auto m = small_model(sched);
  const ImageSet data{unstack_images(ramp_images(2, 16)), {0, 1}};
  const double before = eval_loss(m, sched, data, 3);
  TrainOptions opt;
  opt.steps = 150;
  opt.lr = 2e-3;
  opt.batch_size = 2;
  train(m, sched, data, opt);
  EXPECT_LT(eval_loss(m, sched, data, 3), 0.8 * before);
}

TEST(Training, LossIsMeanSquaredNoiseError) {
  const auto sched = schedule_linear(100);
  const auto m = small_model(sched);
  Rng rng(6);
  const Tensor x0 = ramp_images(2, 16), eps = rng.normal_tensor(x0.shape());
  const double loss = training_loss(m, sched, x0, std::vector<int>{5, 60}, eps, std::vector<int>{0, 1}).item();
  const auto pred = m.forward(forward_sample(x0, std::vector<int>{5, 60}, eps, sched), {5, 60}, {0, 1});
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += (pred[i] - eps[i]) * (pred[i] - eps[i]);
  EXPECT_NEAR(loss, s / pred.numel(), 1e-12);
}

TEST(Sampling, DeterministicAndInUnitRange) {
  const auto sched = schedule_linear(20);
  const auto m = small_model(sched);
  const auto a = sample(m, sched, 3, 1, 42, {1, 16, 16});
  const auto b = sample(m, sched, 3, 1, 42, {1, 16, 16});
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].to_vector(), b[i].to_vector());
    for (double v : a[i].data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}
