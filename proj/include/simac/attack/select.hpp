#pragma once

// Adaptive greedy time interval selection.
//
// Each round samples five timesteps from the pool, scores each by the summed
// absolute input gradient, deletes the open window (t-20, t+20) around the
// weakest one and takes a signed step on a working copy of the image at the
// strongest one. Stops once the pool holds at most 100 timesteps or after N
// rounds.

#include <functional>
#include <limits>
#include <vector>

#include "simac/attack/gradients.hpp"
#include "simac/attack/timestep_pool.hpp"

namespace simac::attack {

struct SelectionParams {
  int samples = 5;
  int half_window = 20;
  long stop_length = 100;
};

/// Scores timestep t at the current working image.
using GradientEvaluator = std::function<InputGradient(int t, const Tensor& working)>;

struct SelectionRound {
  std::vector<int> sampled;
  std::vector<double> sums;
  int t_min = -1;
  int t_max = -1;
  long removed = 0;
  long pool_length = 0;
};

struct SelectionResult {
  TimestepPool pool;
  std::vector<SelectionRound> rounds;
  /// True when a deletion was refused because it would empty the pool.
  bool stopped_on_empty = false;
};

inline SelectionResult adaptive_select(int T, const GradientEvaluator& evaluate, const Tensor& x, int search_steps,
                                       double alpha, Rng& rng, const SelectionParams& params = {}) {
  SelectionResult res{TimestepPool(T), {}, false};
  Tensor working = x.detach();
  for (int i = 0; i < search_steps; ++i) {
    if (res.pool.length() <= params.stop_length) break;
    SelectionRound round;
    round.sampled = res.pool.sample_distinct(static_cast<std::size_t>(params.samples), rng);
    std::vector<Tensor> grads;
    for (int t : round.sampled) {
      auto g = evaluate(t, working);
      round.sums.push_back(g.abs_sum);
      grads.push_back(std::move(g.grad));
    }
    // Ties go to the smaller timestep.
    std::size_t imin = 0, imax = 0;
    for (std::size_t k = 1; k < round.sampled.size(); ++k) {
      const auto better_min = round.sums[k] < round.sums[imin] ||
                              (round.sums[k] == round.sums[imin] && round.sampled[k] < round.sampled[imin]);
      const auto better_max = round.sums[k] > round.sums[imax] ||
                              (round.sums[k] == round.sums[imax] && round.sampled[k] < round.sampled[imax]);
      if (better_min) imin = k;
      if (better_max) imax = k;
    }
    round.t_min = round.sampled[imin];
    round.t_max = round.sampled[imax];

    const int lo = round.t_min - params.half_window + 1, hi = round.t_min + params.half_window;
    round.removed = res.pool.overlap(lo, hi);
    if (round.removed >= res.pool.length()) {
      round.removed = 0;
      round.pool_length = res.pool.length();
      res.rounds.push_back(std::move(round));
      res.stopped_on_empty = true;
      break;
    }
    res.pool.remove(lo, hi);

    // Unprojected signed step; the next round sees the updated copy.
    auto w = working.mutable_data();
    auto g = grads[imax].data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += alpha * static_cast<double>((g[j] > 0.0) - (g[j] < 0.0));

    round.pool_length = res.pool.length();
    res.rounds.push_back(std::move(round));
  }
  return res;
}

/// Model-backed selection on a single image; eps is drawn from `rng` per evaluation.
template <diffusion::NoisePredictor M>
SelectionResult adaptive_select(const M& model, const diffusion::NoiseSchedule& sched, const Tensor& x, int cond,
                                int search_steps, double alpha, Rng& rng, const SelectionParams& params = {}) {
  GradientEvaluator eval = [&](int t, const Tensor& working) {
    return grad_abs_sum(model, sched, working, t, cond, rng);
  };
  return adaptive_select(sched.T, eval, x, search_steps, alpha, rng, params);
}

}  // namespace simac::attack
