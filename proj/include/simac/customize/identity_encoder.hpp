#pragma once

// Small subject classifier whose penultimate layer serves as an identity
// embedding for the ISM proxy.
//
//   x [1,32,32] -> conv s2 [8,16,16] -> conv s2 [16,8,8] -> conv s2 [32,4,4]
//   -> flatten [512] -> fc [d] (embedding) -> fc [K] (logits)

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "simac/customize/subjects.hpp"
#include "simac/ops.hpp"
#include "simac/optim.hpp"

namespace simac::customize {

class encoder_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderOptions {
  std::size_t embed_dim = 32;
  long steps = 600;
  std::size_t batch_size = 32;
  double lr = 3e-3;
  /// Freshly jittered renders per subject used as the training pool.
  std::size_t renders_per_subject = 24;
  double min_accuracy = 0.9;
};

class IdentityEncoder {
 public:
  IdentityEncoder() = default;

  IdentityEncoder(std::size_t n_classes, std::size_t image_size, std::size_t embed_dim, Rng& rng) {
    const std::size_t side = image_size / 8;
    add("c0.w", init({8, 1, 3, 3}, 9, rng));
    add("c0.b", Tensor::zeros({8}));
    add("c1.w", init({16, 8, 3, 3}, 72, rng));
    add("c1.b", Tensor::zeros({16}));
    add("c2.w", init({32, 16, 3, 3}, 144, rng));
    add("c2.b", Tensor::zeros({32}));
    add("embed.w", init({32 * side * side, embed_dim}, 32 * side * side, rng));
    add("embed.b", Tensor::zeros({embed_dim}));
    add("cls.w", init({embed_dim, n_classes}, embed_dim, rng));
    add("cls.b", Tensor::zeros({n_classes}));
  }

  std::size_t n_classes() const { return param("cls.b").numel(); }
  std::size_t embed_dim() const { return param("embed.b").numel(); }
  /// Held-out top-1 accuracy measured at training time.
  double accuracy() const { return accuracy_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [n, t] : params_) out.push_back(t);
    return out;
  }

  /// Raw (unnormalised) embeddings, [N,d].
  Tensor features(const Tensor& x) const {
    auto block = [&](const Tensor& in, const std::string& name) {
      Tensor h = ops::conv2d(in, param(name + ".w"), 2, 1);
      return ops::silu(ops::add_channel_bias(h, param(name + ".b")));
    };
    Tensor h = block(block(block(x, "c0"), "c1"), "c2");
    h = ops::reshape(h, {x.dim(0), h.numel() / x.dim(0)});
    return ops::add_row_vector(ops::matmul(h, param("embed.w")), param("embed.b"));
  }

  Tensor logits(const Tensor& x) const {
    return ops::add_row_vector(ops::matmul(ops::silu(features(x)), param("cls.w")), param("cls.b"));
  }

  /// Unit-norm embeddings, one per image.
  std::vector<std::vector<double>> embed(const std::vector<Tensor>& images) const {
    NoGradGuard no_grad;
    const Tensor f = features(diffusion::stack_images(images));
    const std::size_t d = f.dim(1);
    std::vector<std::vector<double>> out(images.size(), std::vector<double>(d));
    for (std::size_t n = 0; n < images.size(); ++n) {
      double norm = 0.0;
      for (std::size_t k = 0; k < d; ++k) norm += f.data()[n * d + k] * f.data()[n * d + k];
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < d; ++k) out[n][k] = norm > 0.0 ? f.data()[n * d + k] / norm : 0.0;
    }
    return out;
  }

  std::vector<int> classify(const std::vector<Tensor>& images) const {
    NoGradGuard no_grad;
    const Tensor z = logits(diffusion::stack_images(images));
    const std::size_t K = z.dim(1);
    std::vector<int> out;
    for (std::size_t n = 0; n < images.size(); ++n) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (z.data()[n * K + k] > z.data()[n * K + best]) best = k;
      out.push_back(static_cast<int>(best));
    }
    return out;
  }

  friend IdentityEncoder train_identity_encoder(const std::vector<Subject>&, Rng&, const EncoderOptions&);

 private:
  const Tensor& param(const std::string& name) const {
    for (auto& [n, t] : params_)
      if (n == name) return t;
    throw std::out_of_range("no encoder parameter named " + name);
  }

  void add(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, std::move(t));
  }

  static Tensor init(Shape shape, std::size_t fan_in, Rng& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sd * rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
  }

  std::vector<std::pair<std::string, Tensor>> params_;
  double accuracy_ = 0.0;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
}

/// Trains on jittered renders of every subject, labelled by position in
/// `corpus`, and checks top-1 accuracy on the subjects' held-out images.
inline IdentityEncoder train_identity_encoder(const std::vector<Subject>& corpus, Rng& rng,
                                              const EncoderOptions& opt = {}) {
  if (corpus.size() < 2) throw std::invalid_argument("train_identity_encoder: need at least two subjects");
  const std::size_t size = corpus.front().train.front().dim(1);
  IdentityEncoder enc(corpus.size(), size, opt.embed_dim, rng);

  SubjectOptions render;
  render.image_size = size;
  std::vector<Tensor> pool;
  std::vector<int> labels;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    for (auto& im : corpus[k].train) {
      pool.push_back(im);
      labels.push_back(static_cast<int>(k));
    }
    for (std::size_t r = 0; r < opt.renders_per_subject; ++r) {
      pool.push_back(jittered_image(corpus[k].params, render, rng));
      labels.push_back(static_cast<int>(k));
    }
  }

  Adam adam(enc.parameters(), opt.lr);
  std::vector<std::size_t> order(pool.size());
  std::size_t cursor = order.size();
  const std::size_t bs = std::min(opt.batch_size, pool.size());
  for (long step = 0; step < opt.steps; ++step) {
    std::vector<Tensor> batch;
    std::vector<int> y;
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(pool[order[cursor]]);
      y.push_back(labels[order[cursor]]);
      ++cursor;
    }
    adam.zero_grad();
    Tensor loss = ops::cross_entropy(enc.logits(diffusion::stack_images(batch)), y);
    loss.backward();
    adam.step();
  }

  std::vector<Tensor> held;
  std::vector<int> truth;
  for (std::size_t k = 0; k < corpus.size(); ++k)
    for (auto& im : corpus[k].heldout) {
      held.push_back(im);
      truth.push_back(static_cast<int>(k));
    }
  if (held.empty()) throw std::invalid_argument("train_identity_encoder: subjects have no held-out images");
  const auto pred = enc.classify(held);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  enc.accuracy_ = static_cast<double>(hit) / static_cast<double>(pred.size());
  if (enc.accuracy_ < opt.min_accuracy)
    throw encoder_error("identity encoder held-out accuracy " + std::to_string(enc.accuracy_) + " below " +
                        std::to_string(opt.min_accuracy));
  for (auto& [n, t] : enc.params_) t.set_requires_grad(false);
  return enc;
}

}  // namespace simac::customize
