#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "simac/grad_check.hpp"
#include "simac/ops.hpp"
#include "simac/optim.hpp"
#include "simac/rng.hpp"
#include "simac/tensor_io.hpp"
#include "oracles.hpp"

using namespace simac;

namespace {

Tensor randn(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor::from({2, 3}, std::vector<double>(5)), shape_error);
  EXPECT_THROW(Tensor::from({0, 3}, {}), shape_error);
  EXPECT_THROW(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), shape_error);
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), shape_error);
  EXPECT_THROW(Tensor::zeros({2}).item(), shape_error);
}

TEST(Tensor, ElementwiseAndMatmulMatchDirectArithmetic) {
  Rng rng(1);
  const Tensor a = randn(rng, {3, 4}), b = randn(rng, {4, 2}), c = randn(rng, {3, 4});
  const auto s = ops::add(a, c), p = ops::mul(a, c), d = ops::sub(a, c);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(s[i], a[i] + c[i]);
    EXPECT_EQ(p[i], a[i] * c[i]);
    EXPECT_EQ(d[i], a[i] - c[i]);
  }
  const auto m = ops::matmul(a, b);
  ASSERT_EQ(m.shape(), (Shape{3, 2}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double want = 0.0;
      for (std::size_t k = 0; k < 4; ++k) want += a[i * 4 + k] * b[k * 2 + j];
      EXPECT_NEAR(m[i * 2 + j], want, 1e-12);
    }
}

TEST(Tensor, ConvMatchesDirectLoop) {
  Rng rng(2);
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      const Tensor x = randn(rng, {2, 3, 9, 7});
      const Tensor k = randn(rng, {5, 3, 3, 3});
      const auto y = ops::conv2d(x, k, stride, pad);
      const auto want = oracle::conv2d(x, k, stride, pad);
      ASSERT_EQ(y.numel(), want.size());
      for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
    }
}

TEST(Tensor, ConvRejectsChannelMismatch) {
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 1), shape_error);
}

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  Rng rng(3);
  const Tensor w = randn(rng, {4, 3});
  const std::vector<int> ids{3, 0, 2, 0};
  const std::vector<int> labels{1, 0, 2};
  std::vector<std::pair<std::string, std::function<Tensor(const Tensor&)>>> cases{
      {"silu", [](const Tensor& x) { return ops::sum(ops::silu(x)); }},
      {"relu", [](const Tensor& x) { return ops::sum(ops::mul(ops::relu(x), x)); }},
      {"mse", [&](const Tensor& x) { return ops::mse(x, ops::mul(x, x)); }},
      {"matmul", [&](const Tensor& x) { return ops::mean(ops::square(ops::matmul(ops::reshape(x, {3, 4}), w))); }},
      {"gather", [&](const Tensor& x) { return ops::sum(ops::square(ops::gather_rows(ops::reshape(x, {4, 3}), ids))); }},
      {"xent", [&](const Tensor& x) { return ops::cross_entropy(ops::reshape(x, {3, 4}), labels); }},
      {"axpby", [&](const Tensor& x) { return ops::sum(ops::square(ops::axpby(x, 0.3, ops::silu(x), -1.7))); }},
  };
  for (auto& [name, fn] : cases) {
    const Tensor x = randn(rng, {12});
    EXPECT_LT(grad_check(fn, x), 1e-6) << name;
  }
}

TEST(Autodiff, SpatialOpsMatchFiniteDifferences) {
  Rng rng(4);
  const Tensor k = randn(rng, {3, 2, 3, 3}, 0.5);
  const Tensor b = randn(rng, {3});
  const Tensor v = randn(rng, {2, 3});
  auto fn = [&](const Tensor& x) {
    Tensor h = ops::conv2d(x, k, 2, 1);
    h = ops::add_channel_bias(h, b);
    h = ops::add_channel_vector(h, v);
    h = ops::concat_channels(ops::upsample2x(ops::silu(h)), x);
    return ops::mean(ops::square(ops::global_avg_pool(ops::square(h))));
  };
  EXPECT_LT(grad_check(fn, randn(rng, {2, 2, 6, 6})), 1e-6);
}

TEST(Autodiff, FiftyRandomNetworks) {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng.integer(0, 2), h = 4 + 2 * rng.integer(0, 2), o = 1 + rng.integer(0, 3);
    const Tensor k1 = randn(rng, {o, c, 3, 3}, 0.5);
    const Tensor k2 = randn(rng, {2, o + c, 3, 3}, 0.5);
    const auto act = trial % 2 ? ops::Activation::silu : ops::Activation::relu;
    auto fn = [&](const Tensor& x) {
      Tensor y = ops::activation(act, ops::conv2d(x, k1, 2, 1));
      y = ops::conv2d(ops::concat_channels(ops::upsample2x(y), x), k2, 1, 1);
      return ops::mean(ops::square(y));
    };
    worst = std::max(worst, grad_check(fn, randn(rng, {1, c, h, h})));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  Tensor x = Tensor::from({2}, {1.5, -2.0}, true);
  ops::sum(ops::add(ops::mul(x, x), x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 1);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2 * -2.0 + 1);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard g;
    y = ops::mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(ops::mul(x, x).requires_grad());
}

TEST(TensorIo, RoundTripIsExact) {
  Rng rng(6);
  const Tensor t = randn(rng, {2, 1, 3, 5});
  std::stringstream ss;
  io::write_tensor(ss, t);
  const auto bytes = ss.str();
  ASSERT_EQ(bytes.substr(0, 4), "TNS1");
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u * 4u + 8u * 30u);
  const Tensor back = io::read_tensor(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.to_vector(), t.to_vector());
}

TEST(TensorIo, LittleEndianLayout) {
  std::stringstream ss;
  io::write_tensor(ss, Tensor::from({1}, {1.0}));
  const auto b = ss.str();
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);  // extent
  EXPECT_EQ(static_cast<unsigned char>(b[19]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(b[18]), 0xF0u);
}

TEST(TensorIo, RejectsCorruptInput) {
  std::stringstream bad_magic("XXXX");
  EXPECT_THROW(io::read_tensor(bad_magic), io::format_error);
  std::stringstream ss;
  io::write_tensor(ss, Tensor::zeros({4}));
  std::stringstream truncated(ss.str().substr(0, ss.str().size() - 3));
  EXPECT_THROW(io::read_tensor(truncated), io::format_error);
}

TEST(Rng, SeedsAndSubstreamsAreDeterministic) {
  Rng a(9), b(9);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.bits(), b.bits());
  EXPECT_NE(substream_seed(9, "attack"), substream_seed(9, "victim"));
  EXPECT_NE(substream_seed(9, "attack"), substream_seed(10, "attack"));
  EXPECT_EQ(substream_seed(9, "attack"), substream_seed(9, "attack"));
  Rng c(9);
  (void)c.substream("x");
  Rng d(9);
  EXPECT_EQ(c.bits(), d.bits());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::from({3}, {1.0, -1.0, 0.5}, true);
  Adam opt({p}, 0.1);
  ops::sum(ops::mul(p, Tensor::from({3}, {2.0, -3.0, 0.0}))).backward();
  opt.step();
  // m_hat / sqrt(v_hat) = g / |g| on the first step.
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -1.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_DOUBLE_EQ(p[2], 0.5);
}
