#pragma once

// Deterministic construction of the shared experiment inputs from a RunConfig.
//
//   stream "dataset"   corpus subjects (ids 0..n_subjects-1)
//   stream "targets"   target subjects (ids n_subjects..), never seen by the base model
//   stream "<name>"    base model init + training; "surrogate" by default
//   stream "encoder"   identity encoder

#include <string>
#include <vector>

#include "simac/customize/identity_encoder.hpp"
#include "simac/customize/subjects.hpp"
#include "simac/diffusion/denoiser.hpp"
#include "simac/diffusion/training.hpp"
#include "simac/harness/run_config.hpp"

namespace simac::harness {

struct Corpus {
  std::vector<customize::Subject> subjects;
  std::vector<customize::Subject> targets;

  std::vector<customize::Subject> all() const {
    auto out = subjects;
    out.insert(out.end(), targets.begin(), targets.end());
    return out;
  }
};

inline Corpus make_corpus(const RunConfig& cfg) {
  Corpus c;
  Rng data(substream_seed(cfg.seed, "dataset"));
  for (int i = 0; i < cfg.n_subjects; ++i) c.subjects.push_back(customize::synth_subject(data, i, cfg.subject_options(false)));
  Rng tgt(substream_seed(cfg.seed, "targets"));
  for (int k = 0; k < cfg.n_targets; ++k)
    c.targets.push_back(customize::synth_subject(tgt, cfg.target_condition(k), cfg.subject_options(true)));
  return c;
}

/// Base model trained on the corpus subjects only. `stream` names the seed
/// sub-stream, so independently trained models differ in init and data order.
inline diffusion::Denoiser train_base(const RunConfig& cfg, const Corpus& corpus, const std::string& stream = "surrogate",
                                      diffusion::TrainLog* log = nullptr) {
  const auto sched = cfg.schedule();
  Rng init(substream_seed(cfg.seed, stream + ".init"));
  diffusion::Denoiser model(cfg.denoiser_config(), sched, init);
  auto l = diffusion::train(model, sched, customize::to_image_set(corpus.subjects),
                            cfg.base_train_options(substream_seed(cfg.seed, stream + ".train")));
  if (log) *log = std::move(l);
  return model;
}

/// Encoder over every subject, targets included, labelled by position in
/// Corpus::all().
inline customize::IdentityEncoder make_encoder(const RunConfig& cfg, const Corpus& corpus) {
  Rng rng(substream_seed(cfg.seed, "encoder"));
  return customize::train_identity_encoder(corpus.all(), rng, cfg.encoder_options());
}

}  // namespace simac::harness
