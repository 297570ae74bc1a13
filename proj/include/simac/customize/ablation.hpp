#pragma once

// Grid of protect + evaluate runs. The clean arm does not depend on the cell,
// so it is computed once and shared by every row.

#include <chrono>
#include <ostream>
#include <string>
#include <vector>

#include "simac/customize/evaluate.hpp"

namespace simac::customize {

/// Named decoder tap groups.
inline std::vector<int> tap_group(const std::string& name) {
  if (name == "shallow") return {0, 1};
  if (name == "mid") return {2, 3};
  if (name == "deep") return {4, 5};
  throw std::invalid_argument("unknown tap group '" + name + "'");
}

struct AblationCell {
  std::string id;
  double eta = 16.0 / 255.0;
  double lambda = 1.0;
  int epochs = 50;
  bool selection = true;
  std::string taps = "deep";

  /// `base` with this cell's settings applied.
  attack::AttackConfig apply(attack::AttackConfig base) const {
    base.eta = eta;
    base.lambda = lambda;
    base.epochs = epochs;
    base.selection_enabled = selection;
    base.tap_layers = tap_group(taps);
    return base;
  }
};

struct AblationGrid {
  std::vector<std::string> taps{"deep"};
  std::vector<double> etas{16.0 / 255.0};
  std::vector<int> epochs{50};
  std::vector<bool> selection{true};
  std::vector<double> lambdas{1.0};
};

/// Cartesian product in the order taps, eta, epochs, selection, lambda.
inline std::vector<AblationCell> expand_grid(const AblationGrid& g) {
  std::vector<AblationCell> out;
  for (auto& tp : g.taps)
    for (double e : g.etas)
      for (int ep : g.epochs)
        for (bool s : g.selection)
          for (double l : g.lambdas) {
            AblationCell c{"", e, l, ep, s, tp};
            c.id = "c" + std::to_string(out.size());
            (void)tap_group(tp);
            out.push_back(std::move(c));
          }
  if (out.empty()) throw std::invalid_argument("ablation grid is empty");
  return out;
}

struct AblationRow {
  AblationCell cell;
  ArmMetrics clean;
  ArmMetrics shielded;
  double wallclock_s = 0.0;
  attack::Perturbation perturbation;
};

inline std::vector<AblationRow> ablation_suite(const diffusion::Denoiser& base, const diffusion::NoiseSchedule& sched,
                                               const Subject& subject, int cond, const IdentityEncoder& enc,
                                               const attack::AttackConfig& attack_base,
                                               const std::vector<AblationCell>& cells, const EvalConfig& cfg,
                                               const EvalSeeds& seeds) {
  if (cells.empty()) throw std::invalid_argument("ablation_suite: no cells");
  const ArmMetrics clean = evaluate_victim(base, sched, subject.train, subject, cond, enc, cfg, seeds);
  std::vector<AblationRow> rows;
  for (auto& cell : cells) {
    const auto start = std::chrono::steady_clock::now();
    auto prot = attack::protect(base, sched, subject.train, cond, cell.apply(attack_base));
    auto m = evaluate_victim(base, sched, prot.perturbation.perturbed_images(), subject, cond, enc, cfg, seeds);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back({cell, clean, m, secs, std::move(prot.perturbation)});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "cell_id,eta,lambda,epochs,selection,tap_layers,ism_proxy_clean,ism_proxy_protected,"
        "artifact_energy_clean,artifact_energy_protected,recon_gap,wallclock_s\n";
  auto f = [](double v) { return harness::format_double(v); };
  for (auto& r : rows) {
    std::string taps;
    for (int l : tap_group(r.cell.taps)) taps += (taps.empty() ? "" : ";") + std::to_string(l);
    os << r.cell.id << ',' << f(r.cell.eta) << ',' << f(r.cell.lambda) << ',' << r.cell.epochs << ','
       << (r.cell.selection ? 1 : 0) << ',' << taps << ',' << f(r.clean.ism_proxy) << ',' << f(r.shielded.ism_proxy)
       << ',' << f(r.clean.artifact_energy) << ',' << f(r.shielded.artifact_energy) << ','
       << f(r.shielded.recon_error - r.clean.recon_error) << ',' << f(r.wallclock_s) << '\n';
  }
}

}  // namespace simac::customize
