#pragma once

// Typed configuration for every CLI stage, loaded from flat key=value text.
// All randomness derives from `seed` through named sub-streams.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "simac/analysis/spectrum.hpp"
#include "simac/attack/config.hpp"
#include "simac/customize/evaluate.hpp"
#include "simac/customize/identity_encoder.hpp"
#include "simac/diffusion/schedule.hpp"
#include "simac/diffusion/training.hpp"
#include "simac/harness/keyvalue.hpp"

namespace simac::harness {

struct RunConfig {
  std::uint64_t seed = 0;

  // corpus
  int image_size = 32;
  int n_subjects = 20;
  int images_per_subject = 8;
  int n_targets = 4;
  int target_train_images = 5;
  int heldout_images = 3;
  int max_shift = 2;
  double pixel_noise = 0.02;

  // diffusion
  int timesteps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int n_conditions = 32;
  long base_steps = 3000;
  double base_lr = 1e-3;
  int base_batch = 8;
  double cond_dropout = 0.2;

  // attack
  attack::AttackConfig attack;

  // victim
  long finetune_steps = 1000;
  double finetune_lr = 1e-4;
  int finetune_batch = 8;
  int n_samples = 30;

  // identity encoder
  long encoder_steps = 600;
  int encoder_renders = 24;

  // analyses
  int grad_buckets = 10;
  int grad_samples = 50;
  double grad_threshold = 1e-10;
  std::vector<int> freq_ranges{0, 100, 700, 800};  // inclusive lo,hi pairs
  int freq_samples = 100;
  std::string magnitude = "amplitude";
  int pca_timestep = 500;
  std::vector<int> pca_layers{0, 1, 2, 3, 4, 5};
  int pca_k = 3;
  int theorem1_seeds = 200;
  std::string theorem1_profile = "step500";

  // ablation grid
  std::vector<double> ablate_eta{4.0 / 255, 8.0 / 255, 16.0 / 255, 32.0 / 255};
  std::vector<double> ablate_lambda{1.0};
  std::vector<int> ablate_epochs{50};
  std::vector<int> ablate_selection{1};
  std::vector<std::string> ablate_taps{"deep"};

  Schema schema() {
    return {
        {"seed", &seed, true},
        {"image_size", &image_size},
        {"n_subjects", &n_subjects},
        {"images_per_subject", &images_per_subject},
        {"n_targets", &n_targets},
        {"target_train_images", &target_train_images},
        {"heldout_images", &heldout_images},
        {"max_shift", &max_shift},
        {"pixel_noise", &pixel_noise},
        {"timesteps", &timesteps},
        {"beta_min", &beta_min},
        {"beta_max", &beta_max},
        {"n_conditions", &n_conditions},
        {"base_steps", &base_steps},
        {"base_lr", &base_lr},
        {"base_batch", &base_batch},
        {"cond_dropout", &cond_dropout},
        {"eta", &attack.eta},
        {"alpha", &attack.alpha},
        {"epochs", &attack.epochs},
        {"surrogate_steps_per_epoch", &attack.surrogate_steps_per_epoch},
        {"attack_steps_per_epoch", &attack.attack_steps_per_epoch},
        {"lambda", &attack.lambda},
        {"tap_layers", &attack.tap_layers},
        {"search_steps", &attack.search_steps},
        {"selection_enabled", &attack.selection_enabled},
        {"surrogate_lr", &attack.surrogate_lr},
        {"finetune_steps", &finetune_steps},
        {"finetune_lr", &finetune_lr},
        {"finetune_batch", &finetune_batch},
        {"n_samples", &n_samples},
        {"encoder_steps", &encoder_steps},
        {"encoder_renders", &encoder_renders},
        {"grad_buckets", &grad_buckets},
        {"grad_samples", &grad_samples},
        {"grad_threshold", &grad_threshold},
        {"freq_ranges", &freq_ranges},
        {"freq_samples", &freq_samples},
        {"magnitude", &magnitude},
        {"pca_timestep", &pca_timestep},
        {"pca_layers", &pca_layers},
        {"pca_k", &pca_k},
        {"theorem1_seeds", &theorem1_seeds},
        {"theorem1_profile", &theorem1_profile},
        {"ablate_eta", &ablate_eta},
        {"ablate_lambda", &ablate_lambda},
        {"ablate_epochs", &ablate_epochs},
        {"ablate_selection", &ablate_selection},
        {"ablate_taps", &ablate_taps},
    };
  }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw config_error(what);
    };
    need(image_size >= 8 && image_size % 8 == 0, "image_size must be a positive multiple of 8");
    need(n_subjects >= 1 && images_per_subject >= 1, "corpus needs at least one subject and image");
    need(n_targets >= 1 && target_train_images >= 1 && heldout_images >= 1,
         "targets need train and held-out images");
    need(n_subjects + n_targets <= n_conditions, "n_conditions must cover corpus and target subjects");
    need(max_shift >= 0 && pixel_noise >= 0.0, "max_shift and pixel_noise must be >= 0");
    need(timesteps >= 2, "timesteps must be >= 2");
    need(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max, "need 0 < beta_min <= beta_max < 1");
    need(base_steps >= 0 && finetune_steps >= 0 && encoder_steps >= 0, "step counts must be >= 0");
    need(base_lr > 0.0 && finetune_lr > 0.0, "learning rates must be > 0");
    need(base_batch >= 1 && finetune_batch >= 1 && n_samples >= 1, "batch sizes and n_samples must be >= 1");
    need(cond_dropout >= 0.0 && cond_dropout <= 1.0, "cond_dropout must lie in [0,1]");
    need(grad_buckets >= 1 && grad_buckets <= timesteps && grad_samples >= 1, "bad gradient study sizes");
    need(grad_threshold >= 0.0, "grad_threshold must be >= 0");
    need(!freq_ranges.empty() && freq_ranges.size() % 2 == 0, "freq_ranges must hold lo,hi pairs");
    for (std::size_t i = 0; i < freq_ranges.size(); i += 2)
      need(freq_ranges[i] >= 0 && freq_ranges[i] <= freq_ranges[i + 1] && freq_ranges[i + 1] < timesteps,
           "freq_ranges entries must satisfy 0 <= lo <= hi < timesteps");
    need(freq_samples >= 1, "freq_samples must be >= 1");
    need(magnitude == "amplitude" || magnitude == "power", "magnitude must be amplitude or power");
    need(pca_timestep >= 0 && pca_timestep < timesteps && pca_k >= 1, "bad PCA settings");
    for (int l : pca_layers) need(l >= 0 && l < diffusion::kDecoderLayers, "pca_layers outside 0..5");
    need(theorem1_seeds >= 1, "theorem1_seeds must be >= 1");
    for (auto& g : ablate_taps) need(g == "shallow" || g == "mid" || g == "deep", "ablate_taps: shallow, mid or deep");
    for (int s : ablate_selection) need(s == 0 || s == 1, "ablate_selection entries must be 0 or 1");
    for (double e : ablate_eta) need(e > 0.0, "ablate_eta entries must be > 0");
    for (double l : ablate_lambda) need(l >= 0.0, "ablate_lambda entries must be >= 0");
    for (int e : ablate_epochs) need(e >= 0, "ablate_epochs entries must be >= 0");
    need(!ablate_eta.empty() && !ablate_lambda.empty() && !ablate_epochs.empty() && !ablate_selection.empty() &&
             !ablate_taps.empty(),
         "ablation grid axes must be non-empty");
    attack.validate();
  }

  // Derived views.
  diffusion::NoiseSchedule schedule() const { return diffusion::schedule_linear(timesteps, beta_min, beta_max); }

  customize::SubjectOptions subject_options(bool target) const {
    customize::SubjectOptions o;
    o.image_size = static_cast<std::size_t>(image_size);
    o.n_train = static_cast<std::size_t>(target ? target_train_images : images_per_subject);
    o.n_heldout = static_cast<std::size_t>(heldout_images);
    o.max_shift = max_shift;
    o.pixel_noise = pixel_noise;
    return o;
  }

  diffusion::DenoiserConfig denoiser_config() const {
    diffusion::DenoiserConfig c;
    c.image_size = static_cast<std::size_t>(image_size);
    c.n_conditions = static_cast<std::size_t>(n_conditions);
    return c;
  }

  diffusion::TrainOptions base_train_options(std::uint64_t stream_seed) const {
    diffusion::TrainOptions o;
    o.steps = base_steps;
    o.lr = base_lr;
    o.batch_size = static_cast<std::size_t>(base_batch);
    o.cond_dropout = cond_dropout;
    o.seed = stream_seed;
    return o;
  }

  customize::EvalConfig eval_config() const {
    customize::EvalConfig e;
    e.finetune_steps = finetune_steps;
    e.finetune_lr = finetune_lr;
    e.finetune_batch = static_cast<std::size_t>(finetune_batch);
    e.n_samples = static_cast<std::size_t>(n_samples);
    return e;
  }

  customize::EncoderOptions encoder_options() const {
    customize::EncoderOptions o;
    o.steps = encoder_steps;
    o.renders_per_subject = static_cast<std::size_t>(encoder_renders);
    return o;
  }

  /// Attack settings with the seed taken from the "attack" sub-stream.
  attack::AttackConfig attack_config() const {
    auto a = attack;
    a.seed = substream_seed(seed, "attack");
    return a;
  }

  customize::EvalSeeds eval_seeds() const {
    return {substream_seed(seed, "victim"), substream_seed(seed, "generation"), substream_seed(seed, "recon")};
  }

  analysis::MagnitudeKind magnitude_kind() const {
    return magnitude == "power" ? analysis::MagnitudeKind::power : analysis::MagnitudeKind::amplitude;
  }

  /// Condition id of target subject k; targets follow the corpus ids.
  int target_condition(int k) const { return n_subjects + k; }
};

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  load_into(cfg.schema(), text);
  cfg.validate();
  return cfg;
}

inline RunConfig config_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

inline std::string config_dump(RunConfig cfg) { return dump_schema(cfg.schema()); }

}  // namespace simac::harness
