#pragma once

// Victim-side simulation: fine-tune a copy of the base model on a subject's
// (clean or protected) images, generate, and score the generations.
//
// ism_proxy        mean cosine between generated and clean reference embeddings
// artifact_energy  high-frequency share of the mean-removed generated images
// recon_error      victim's denoising loss on the subject's held-out clean images
//
// The last two are proxies; no face detector or quality model exists here.

#include <optional>
#include <ostream>
#include <vector>

#include "simac/analysis/spectrum.hpp"
#include "simac/attack/protect.hpp"
#include "simac/customize/identity_encoder.hpp"
#include "simac/diffusion/training.hpp"

namespace simac::customize {

struct EvalConfig {
  long finetune_steps = 1000;
  double finetune_lr = 1e-4;
  std::size_t finetune_batch = 8;
  std::size_t n_samples = 30;
};

/// Seeds shared by both arms of a paired evaluation.
struct EvalSeeds {
  std::uint64_t victim = 0;      // fine-tuning minibatch and noise draws
  std::uint64_t generation = 0;  // sampling noise
  std::uint64_t recon = 0;       // held-out (t, eps) draws
};

struct ArmMetrics {
  double ism_proxy = 0.0;
  double artifact_energy = 0.0;
  double recon_error = 0.0;
};

struct ProtectionReport {
  ArmMetrics clean;
  ArmMetrics shielded;  // victim trained on protected images

  double ism_drop() const { return clean.ism_proxy - shielded.ism_proxy; }
  double artifact_rise() const { return shielded.artifact_energy - clean.artifact_energy; }
  double recon_gap() const { return shielded.recon_error - clean.recon_error; }
};

/// Reference identity: normalised mean of the clean images' unit embeddings.
inline std::vector<double> reference_embedding(const IdentityEncoder& enc, const std::vector<Tensor>& clean) {
  if (clean.empty()) throw std::invalid_argument("reference_embedding: no images");
  auto e = enc.embed(clean);
  std::vector<double> ref(e.front().size(), 0.0);
  for (auto& v : e)
    for (std::size_t k = 0; k < v.size(); ++k) ref[k] += v[k];
  double norm = 0.0;
  for (double v : ref) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& v : ref) v /= norm;
  return ref;
}

inline double ism_proxy(const IdentityEncoder& enc, const std::vector<Tensor>& generated,
                        const std::vector<double>& reference) {
  if (generated.empty()) return 0.0;
  double s = 0.0;
  for (auto& e : enc.embed(generated)) s += cosine(e, reference);
  return s / static_cast<double>(generated.size());
}

/// Mean high-frequency share of the images with their mean removed.
inline double artifact_energy(const std::vector<Tensor>& images) {
  if (images.empty()) return 0.0;
  double s = 0.0;
  for (auto& im : images) {
    auto v = im.to_vector();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double& x : v) x -= mean;
    const auto profile = analysis::radial_profile(analysis::fft2d(Tensor::from(im.shape(), std::move(v))));
    s += profile.total() > 0.0 ? analysis::high_frequency_share(profile) : 0.0;
  }
  return s / static_cast<double>(images.size());
}

/// One victim: fine-tune a copy of `base` on `train_images` bound to `cond`,
/// generate `n_samples` images and score them against `subject`.
inline ArmMetrics evaluate_victim(const diffusion::Denoiser& base, const diffusion::NoiseSchedule& sched,
                                  const std::vector<Tensor>& train_images, const Subject& subject, int cond,
                                  const IdentityEncoder& enc, const EvalConfig& cfg, const EvalSeeds& seeds,
                                  std::vector<Tensor>* samples_out = nullptr) {
  diffusion::Denoiser victim = base.clone();
  diffusion::TrainOptions opt;
  opt.steps = cfg.finetune_steps;
  opt.lr = cfg.finetune_lr;
  opt.batch_size = cfg.finetune_batch;
  opt.seed = seeds.victim;
  diffusion::finetune(victim, sched, train_images, cond, opt);

  const Shape image_shape = subject.train.front().shape();
  auto samples = diffusion::sample(victim, sched, cfg.n_samples, cond, seeds.generation, image_shape);

  std::vector<Tensor> refs = subject.train;
  refs.insert(refs.end(), subject.heldout.begin(), subject.heldout.end());
  ArmMetrics m;
  m.ism_proxy = ism_proxy(enc, samples, reference_embedding(enc, refs));
  m.artifact_energy = artifact_energy(samples);
  const auto& held = subject.heldout.empty() ? subject.train : subject.heldout;
  m.recon_error = diffusion::eval_loss(victim, sched, {held, std::vector<int>(held.size(), cond)}, seeds.recon);
  if (samples_out) *samples_out = std::move(samples);
  return m;
}

/// Paired clean / protected evaluation with identical seeds. Without a
/// perturbation the protected arm trains on the clean images.
inline ProtectionReport evaluate_protection(const diffusion::Denoiser& base, const diffusion::NoiseSchedule& sched,
                                            const Subject& subject, int cond,
                                            const std::optional<attack::Perturbation>& pert,
                                            const IdentityEncoder& enc, const EvalConfig& cfg,
                                            const EvalSeeds& seeds) {
  if (pert && pert->base_images.size() != subject.train.size())
    throw std::invalid_argument("evaluate_protection: perturbation does not match the subject's train images");
  ProtectionReport r;
  r.clean = evaluate_victim(base, sched, subject.train, subject, cond, enc, cfg, seeds);
  r.shielded = evaluate_victim(base, sched, pert ? pert->perturbed_images() : subject.train, subject, cond, enc,
                               cfg, seeds);
  return r;
}

struct MismatchReport {
  ProtectionReport matched;     // victim starts from the surrogate's base model
  ProtectionReport mismatched;  // victim starts from an independently trained base model
};

/// Protects with `surrogate_base` and evaluates on both base models.
inline MismatchReport mismatch_eval(const diffusion::Denoiser& surrogate_base,
                                    const diffusion::Denoiser& victim_base, const diffusion::NoiseSchedule& sched,
                                    const Subject& subject, int cond, const IdentityEncoder& enc,
                                    const attack::AttackConfig& attack_cfg, const EvalConfig& cfg,
                                    const EvalSeeds& seeds) {
  const auto prot = attack::protect(surrogate_base, sched, subject.train, cond, attack_cfg);
  return {evaluate_protection(surrogate_base, sched, subject, cond, prot.perturbation, enc, cfg, seeds),
          evaluate_protection(victim_base, sched, subject, cond, prot.perturbation, enc, cfg, seeds)};
}

inline void write_report_csv(std::ostream& os, const std::vector<std::pair<std::string, ProtectionReport>>& rows) {
  os << "arm,ism_proxy_clean,ism_proxy_protected,ism_drop,artifact_energy_clean,artifact_energy_protected,"
        "recon_error_clean,recon_error_protected,recon_gap\n";
  auto f = [](double v) { return harness::format_double(v); };
  for (auto& [name, r] : rows)
    os << name << ',' << f(r.clean.ism_proxy) << ',' << f(r.shielded.ism_proxy) << ',' << f(r.ism_drop()) << ','
       << f(r.clean.artifact_energy) << ',' << f(r.shielded.artifact_energy) << ',' << f(r.clean.recon_error) << ','
       << f(r.shielded.recon_error) << ',' << f(r.recon_gap()) << '\n';
}

}  // namespace simac::customize
