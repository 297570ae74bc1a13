#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "simac/diffusion/denoiser.hpp"
#include "simac/harness/keyvalue.hpp"

namespace simac::attack {

struct AttackConfig {
  double eta = 16.0 / 255.0;  // L-inf budget on [0,1] pixels
  double alpha = 0.005;       // PGD step
  int epochs = 50;
  int surrogate_steps_per_epoch = 3;
  int attack_steps_per_epoch = 9;
  double lambda = 1.0;  // feature interference weight
  std::vector<int> tap_layers{4, 5};
  int search_steps = 50;  // selection round cap
  bool selection_enabled = true;
  double surrogate_lr = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta > 0.0)) throw harness::config_error("eta must be > 0");
    if (!(alpha > 0.0)) throw harness::config_error("alpha must be > 0");
    if (lambda < 0.0) throw harness::config_error("lambda must be >= 0");
    if (epochs < 0 || surrogate_steps_per_epoch < 0 || attack_steps_per_epoch < 0 || search_steps < 0)
      throw harness::config_error("step counts must be >= 0");
    for (int l : tap_layers)
      if (l < 0 || l >= diffusion::kDecoderLayers)
        throw harness::config_error("tap layer " + std::to_string(l) + " outside 0.." +
                                    std::to_string(diffusion::kDecoderLayers - 1));
  }

  harness::Schema schema() {
    return {{"eta", &eta},
            {"alpha", &alpha},
            {"epochs", &epochs},
            {"surrogate_steps_per_epoch", &surrogate_steps_per_epoch},
            {"attack_steps_per_epoch", &attack_steps_per_epoch},
            {"lambda", &lambda},
            {"tap_layers", &tap_layers},
            {"search_steps", &search_steps},
            {"selection_enabled", &selection_enabled},
            {"surrogate_lr", &surrogate_lr},
            {"seed", &seed}};
  }
};

inline AttackConfig parse_attack_config(std::string_view text) {
  AttackConfig cfg;
  harness::load_into(cfg.schema(), text);
  cfg.validate();
  return cfg;
}

inline std::string dump_attack_config(AttackConfig cfg) { return harness::dump_schema(cfg.schema()); }

}  // namespace simac::attack
