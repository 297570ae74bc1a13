// simac command-line driver: one pipeline stage per invocation.
//
// Exit codes: 0 success, 1 verification or runtime failure, 2 usage, config
// or input-file error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "simac/analysis/freq_residual.hpp"
#include "simac/analysis/gradient_stats.hpp"
#include "simac/analysis/pca.hpp"
#include "simac/analysis/theorem1.hpp"
#include "simac/attack/protect.hpp"
#include "simac/customize/ablation.hpp"
#include "simac/customize/evaluate.hpp"
#include "simac/diffusion/checkpoint.hpp"
#include "simac/harness/data_io.hpp"
#include "simac/harness/invariants.hpp"
#include "simac/harness/manifest.hpp"
#include "simac/harness/pipeline.hpp"
#include "simac/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace simac;
using harness::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Problems with arguments, configuration or input files.
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void note(const std::string& msg) { std::cerr << "[simac] " << msg << '\n'; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Shared state of one stage run: parsed config, output directory, manifest.
struct Stage {
  RunConfig cfg;
  fs::path out;
  harness::RunManifest manifest;

  Stage(const std::string& name, const std::vector<std::string>& args, const std::string& config_path,
        const std::string& out_dir)
      : out(out_dir) {
    cfg = harness::config_load(config_path);
    manifest.stage = name;
    manifest.args = args;
    manifest.config_text = harness::config_dump(cfg);
    manifest.inputs.push_back(config_path);
    manifest.seeds["root"] = cfg.seed;
    fs::create_directories(out);
  }

  void seed(const std::string& stream) { manifest.seeds[stream] = substream_seed(cfg.seed, stream); }

  void input(const fs::path& p) { manifest.inputs.push_back(p.string()); }

  template <typename Fn>
  void write(const std::string& rel, Fn&& fn, bool is_volatile = false) {
    {
      std::ofstream os(out / rel, std::ios::binary);
      if (!os) throw std::runtime_error("cannot write '" + (out / rel).string() + "'");
      fn(os);
      if (!os) throw std::runtime_error("failed writing '" + (out / rel).string() + "'");
    }
    manifest.record_output(out, rel, is_volatile);
  }

  void tensor(const std::string& rel, const Tensor& t) {
    io::save_tensor(out / rel, t);
    manifest.record_output(out, rel);
  }

  void checkpoint(const std::string& rel, const diffusion::Denoiser& m) {
    diffusion::save_checkpoint(out / rel, m);
    manifest.record_output(out, rel);
  }

  void finish(double seconds) {
    manifest.wallclock[manifest.stage] = seconds;
    std::ofstream os(out / "manifest.txt", std::ios::binary);
    os << manifest.render();
    if (!os) throw std::runtime_error("failed writing manifest");
  }
};

harness::Corpus load_data(Stage& st, const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "subjects.csv")) throw usage_error("'" + dir + "' holds no subjects.csv");
  st.input(fs::path(dir) / "subjects.csv");
  return harness::load_corpus(dir);
}

diffusion::Denoiser load_model(Stage& st, const std::string& path) {
  st.input(path);
  return diffusion::load_checkpoint(path);
}

const customize::Subject& pick_target(const harness::Corpus& c, int k) {
  if (k < 0 || static_cast<std::size_t>(k) >= c.targets.size())
    throw usage_error("--target " + std::to_string(k) + " outside 0.." + std::to_string(c.targets.size()) +
                      " (exclusive)");
  return c.targets[static_cast<std::size_t>(k)];
}

void check_model(const RunConfig& cfg, const diffusion::Denoiser& m) {
  if (m.timesteps() != static_cast<std::size_t>(cfg.timesteps)) throw usage_error("model timesteps differ from the config");
}

std::vector<Tensor> load_images(Stage& st, const std::string& path, const customize::Subject& subj) {
  st.input(path);
  auto images = diffusion::unstack_images(io::load_tensor(path));
  if (images.size() != subj.train.size() || images.front().shape() != subj.train.front().shape())
    throw usage_error("'" + path + "' does not match the target's train images");
  return images;
}

customize::IdentityEncoder encoder_for(Stage& st, const harness::Corpus& c) {
  st.seed("encoder");
  note("training identity encoder");
  return harness::make_encoder(st.cfg, c);
}

void write_pool(std::ostream& os, const attack::ProtectResult& r) {
  os << "pool " << r.pool.to_string() << '\n' << "length " << r.pool.length() << '\n';
  if (!r.selection) return;
  os << "stopped_on_empty " << (r.selection->stopped_on_empty ? 1 : 0) << '\n';
  for (std::size_t i = 0; i < r.selection->rounds.size(); ++i) {
    auto& round = r.selection->rounds[i];
    os << "round " << i << " t_min " << round.t_min << " t_max " << round.t_max << " removed " << round.removed
       << " pool_length " << round.pool_length << '\n';
  }
}

// ---- stages -------------------------------------------------------------

struct Common {
  std::string config;
  std::string out;
  std::string data;
  std::string model;
  std::string stream = "surrogate";
  int target = 0;
  std::string protected_path;
  std::string images;
  std::string victim_model;
  std::string profile;
  std::string manifest;
};

void stage_synth(Stage& st) {
  st.seed("dataset");
  st.seed("targets");
  const auto corpus = harness::make_corpus(st.cfg);
  for (auto& rel : harness::save_corpus(st.out, corpus)) st.manifest.record_output(st.out, rel);
  note("wrote " + std::to_string(corpus.subjects.size()) + " subjects and " + std::to_string(corpus.targets.size()) +
       " targets");
}

void stage_train_base(Stage& st, const Common& o) {
  const auto corpus = load_data(st, o.data);
  st.seed(o.stream + ".init");
  st.seed(o.stream + ".train");
  Stopwatch sw;
  diffusion::TrainLog log;
  const auto model = harness::train_base(st.cfg, corpus, o.stream, &log);
  st.manifest.wallclock["train"] = sw.seconds();
  st.checkpoint("model.dnz", model);
  st.write("train_log.csv", [&](std::ostream& os) {
    os << "step,loss\n";
    for (std::size_t i = 0; i < log.losses.size(); ++i) os << i << ',' << harness::format_double(log.losses[i]) << '\n';
  });
  const auto sched = st.cfg.schedule();
  const double eval = diffusion::eval_loss(model, sched, customize::to_image_set(corpus.subjects),
                                           substream_seed(st.cfg.seed, "recon"));
  note("trained " + std::to_string(log.losses.size()) + " steps, eval loss " + harness::format_double(eval));
}

void stage_protect(Stage& st, const Common& o) {
  const auto corpus = load_data(st, o.data);
  const auto model = load_model(st, o.model);
  check_model(st.cfg, model);
  const auto& subj = pick_target(corpus, o.target);
  st.seed("attack");
  Stopwatch sw;
  const auto res = attack::protect(model, st.cfg.schedule(), subj.train, subj.id, st.cfg.attack_config());
  st.manifest.wallclock["protect"] = sw.seconds();
  if (!res.perturbation.satisfies_budget()) throw std::runtime_error("perturbation violates its budget");
  st.tensor("delta.tns", diffusion::stack_images(res.perturbation.delta));
  st.tensor("protected.tns", diffusion::stack_images(res.perturbation.perturbed_images()));
  st.write("metrics.csv", [&](std::ostream& os) { attack::write_metrics_csv(os, res.metrics); });
  st.write("pool.txt", [&](std::ostream& os) { write_pool(os, res); });
  note("max |delta| " + harness::format_double(res.perturbation.max_abs_delta()) + ", pool " +
       res.pool.to_string() + ", mean attack |grad| " + harness::format_double(res.mean_attack_grad_abs()));
}

void stage_analyze(Stage& st, const std::string& what, const Common& o) {
  if (what == "theorem1") {
    const auto profiles = analysis::bundled_profiles(st.cfg.timesteps);
    const std::string name = o.profile.empty() ? st.cfg.theorem1_profile : o.profile;
    std::vector<analysis::Theorem1Result> results;
    for (auto& p : profiles)
      if (name == "all" || p.name == name)
        results.push_back(analysis::theorem1_oracle(p, st.cfg.timesteps, st.cfg.theorem1_seeds,
                                                    st.cfg.attack.search_steps, substream_seed(st.cfg.seed, "theorem1")));
    if (results.empty()) throw usage_error("unknown profile '" + name + "'");
    st.seed("theorem1");
    st.write("theorem1.csv", [&](std::ostream& os) { analysis::write_theorem1_csv(os, results); });
    for (auto& r : results)
      note(r.profile + ": selected mean exceeds full mean in " + harness::format_double(r.fraction_greater) +
           " of runs");
    return;
  }

  if (o.data.empty() || o.model.empty()) throw usage_error("analyze " + what + " needs --data and --model");
  const auto corpus = load_data(st, o.data);
  const auto model = load_model(st, o.model);
  check_model(st.cfg, model);
  const auto& subj = pick_target(corpus, o.target);
  const auto sched = st.cfg.schedule();
  const Tensor& image = subj.train.front();
  st.seed("analysis");
  Rng rng(substream_seed(st.cfg.seed, "analysis"));

  if (what == "grads") {
    const auto stats =
        analysis::gradient_stats(model, sched, image, subj.id, analysis::uniform_buckets(sched.T, st.cfg.grad_buckets),
                                 st.cfg.grad_samples, st.cfg.grad_threshold, rng);
    st.write("grads.csv", [&](std::ostream& os) { analysis::write_gradient_stats_csv(os, stats); });
  } else if (what == "freq") {
    std::vector<analysis::TimeRange> ranges;
    for (std::size_t i = 0; i < st.cfg.freq_ranges.size(); i += 2)
      ranges.push_back({st.cfg.freq_ranges[i], st.cfg.freq_ranges[i + 1]});
    const auto res = analysis::freq_residual_study(model, sched, image, subj.id, ranges, st.cfg.freq_samples, rng,
                                                   st.cfg.magnitude_kind());
    st.write("freq.csv", [&](std::ostream& os) { analysis::write_freq_csv(os, res); });
    for (auto& r : res)
      note("t in [" + std::to_string(r.range.lo) + "," + std::to_string(r.range.hi) + "]: high share " +
           harness::format_double(r.high_share) + ", low share " + harness::format_double(r.low_share));
  } else if (what == "pca") {
    NoGradGuard no_grad;
    const int t = st.cfg.pca_timestep;
    const Tensor x = diffusion::stack_images({image});
    const Tensor eps = rng.normal_tensor(x.shape());
    diffusion::FeatureSet feats;
    (void)model.forward(diffusion::forward_sample(x, t, eps, sched), {t}, {subj.id}, &feats);
    const auto map = analysis::pca_features(feats, st.cfg.pca_layers, static_cast<std::size_t>(st.cfg.pca_k));
    st.write("pca.csv", [&](std::ostream& os) { analysis::write_pca_csv(os, map, t); });
    for (auto& l : map.layers)
      for (std::size_t i = 0; i < l.components.size(); ++i) {
        const auto rel = "pca_layer" + std::to_string(l.layer) + "_pc" + std::to_string(i) + ".pgm";
        st.write(rel, [&](std::ostream& os) { analysis::write_pgm(os, l.components[i], l.H, l.W); });
      }
  } else {
    throw usage_error("unknown analysis '" + what + "'");
  }
}

void stage_customize(Stage& st, const Common& o) {
  const auto corpus = load_data(st, o.data);
  const auto model = load_model(st, o.model);
  check_model(st.cfg, model);
  const auto& subj = pick_target(corpus, o.target);
  const auto images = o.images.empty() ? subj.train : load_images(st, o.images, subj);
  const auto seeds = st.cfg.eval_seeds();
  st.seed("victim");
  st.seed("generation");
  const auto ec = st.cfg.eval_config();
  const auto sched = st.cfg.schedule();

  Stopwatch sw;
  diffusion::Denoiser victim = model.clone();
  diffusion::TrainOptions opt;
  opt.steps = ec.finetune_steps;
  opt.lr = ec.finetune_lr;
  opt.batch_size = ec.finetune_batch;
  opt.seed = seeds.victim;
  diffusion::finetune(victim, sched, images, subj.id, opt);
  st.manifest.wallclock["finetune"] = sw.seconds();
  const auto samples = diffusion::sample(victim, sched, ec.n_samples, subj.id, seeds.generation,
                                         subj.train.front().shape());
  st.checkpoint("victim.dnz", victim);
  st.tensor("samples.tns", diffusion::stack_images(samples));
  note("artifact energy of samples " + harness::format_double(customize::artifact_energy(samples)));
}

void stage_evaluate(Stage& st, const Common& o) {
  const auto corpus = load_data(st, o.data);
  const auto model = load_model(st, o.model);
  check_model(st.cfg, model);
  const auto& subj = pick_target(corpus, o.target);
  const auto images = load_images(st, o.protected_path, subj);
  attack::Perturbation pert = attack::Perturbation::zero(subj.train, 1.0);
  for (std::size_t i = 0; i < images.size(); ++i) pert.delta[i] = ops::sub(images[i], subj.train[i]).detach();

  const auto enc = encoder_for(st, corpus);
  st.seed("victim");
  st.seed("generation");
  st.seed("recon");
  const auto sched = st.cfg.schedule();
  std::vector<std::pair<std::string, customize::ProtectionReport>> rows;
  Stopwatch sw;
  rows.emplace_back("matched", customize::evaluate_protection(model, sched, subj, subj.id, pert, enc,
                                                              st.cfg.eval_config(), st.cfg.eval_seeds()));
  if (!o.victim_model.empty()) {
    const auto victim = load_model(st, o.victim_model);
    check_model(st.cfg, victim);
    rows.emplace_back("mismatched", customize::evaluate_protection(victim, sched, subj, subj.id, pert, enc,
                                                                   st.cfg.eval_config(), st.cfg.eval_seeds()));
  }
  st.manifest.wallclock["victims"] = sw.seconds();
  st.write("report.csv", [&](std::ostream& os) { customize::write_report_csv(os, rows); });
  for (auto& [name, r] : rows)
    note(name + ": ism " + harness::format_double(r.clean.ism_proxy) + " -> " +
         harness::format_double(r.shielded.ism_proxy) + ", artifact energy " +
         harness::format_double(r.clean.artifact_energy) + " -> " + harness::format_double(r.shielded.artifact_energy));
}

void stage_ablate(Stage& st, const Common& o) {
  const auto corpus = load_data(st, o.data);
  const auto model = load_model(st, o.model);
  check_model(st.cfg, model);
  const auto& subj = pick_target(corpus, o.target);
  const auto enc = encoder_for(st, corpus);
  st.seed("attack");
  st.seed("victim");
  st.seed("generation");
  st.seed("recon");
  customize::AblationGrid grid;
  grid.taps = st.cfg.ablate_taps;
  grid.etas = st.cfg.ablate_eta;
  grid.epochs = st.cfg.ablate_epochs;
  grid.lambdas = st.cfg.ablate_lambda;
  grid.selection.clear();
  for (int s : st.cfg.ablate_selection) grid.selection.push_back(s != 0);
  const auto cells = customize::expand_grid(grid);
  note("running " + std::to_string(cells.size()) + " ablation cells");
  const auto rows = customize::ablation_suite(model, st.cfg.schedule(), subj, subj.id, enc, st.cfg.attack_config(),
                                              cells, st.cfg.eval_config(), st.cfg.eval_seeds());
  for (auto& r : rows) {
    if (!r.perturbation.satisfies_budget()) throw std::runtime_error("cell " + r.cell.id + " violates its budget");
    st.tensor("delta_" + r.cell.id + ".tns", diffusion::stack_images(r.perturbation.delta));
  }
  // Wallclock columns differ between runs, so the table is excluded from replay checks.
  st.write("ablation.csv", [&](std::ostream& os) { customize::write_ablation_csv(os, rows); }, true);
}

int run(std::vector<std::string> args);

int stage_verify(const Common& o) {
  if (o.manifest.empty()) {
    bool ok = true;
    for (auto& c : harness::run_invariant_suite()) {
      std::cout << (c.ok ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : "  " + c.detail) << '\n';
      ok = ok && c.ok;
    }
    return ok ? kExitOk : kExitFailure;
  }

  const auto recorded = harness::RunManifest::parse(harness::read_file(o.manifest));
  auto args = recorded.args;
  bool has_out = false;
  const fs::path replay_dir = fs::temp_directory_path() / ("simac-replay-" + recorded.run_id());
  fs::remove_all(replay_dir);
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--out") {
      args[i + 1] = replay_dir.string();
      has_out = true;
    }
  if (!has_out || args.empty() || args.front() == "verify") throw usage_error("manifest does not describe a replayable stage");
  note("replaying '" + recorded.stage + "' into " + replay_dir.string());
  const int code = run(args);
  if (code != kExitOk) return code;
  const auto replayed = harness::RunManifest::parse(harness::read_file(replay_dir / "manifest.txt"));
  bool ok = true;
  if (replayed.run_id() != recorded.run_id()) {
    std::cout << "FAIL config or arguments differ from the recorded run\n";
    ok = false;
  }
  const auto bad = recorded.mismatches(replay_dir);
  for (auto& p : bad) std::cout << "FAIL checksum " << p << '\n';
  ok = ok && bad.empty();
  std::cout << (ok ? "PASS" : "FAIL") << " replay of " << recorded.stage << " (" << recorded.checksums.size()
            << " outputs, " << recorded.volatile_outputs.size() << " volatile)\n";
  if (ok) fs::remove_all(replay_dir);
  return ok ? kExitOk : kExitFailure;
}

int run(std::vector<std::string> args) {
  CLI::App app{"Anti-customization perturbations for toy diffusion models", "simac"};
  app.require_subcommand(1);
  Common o;
  auto existing = CLI::ExistingFile;
  auto existing_dir = CLI::ExistingDirectory;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value run configuration")->required()->check(existing);
    sub->add_option("--out", o.out, "output directory")->required();
  };
  auto add_data = [&](CLI::App* sub, bool required) {
    auto* d = sub->add_option("--data", o.data, "corpus directory written by synth")->check(existing_dir);
    auto* m = sub->add_option("--model", o.model, "base model checkpoint")->check(existing);
    if (required) {
      d->required();
      m->required();
    }
  };

  auto* synth = app.add_subcommand("synth", "generate the subject corpus");
  add_common(synth);

  auto* train = app.add_subcommand("train-base", "train a base denoiser on the corpus subjects");
  add_common(train);
  train->add_option("--data", o.data, "corpus directory")->required()->check(existing_dir);
  train->add_option("--stream", o.stream, "seed sub-stream name for init and data order");

  auto* protect = app.add_subcommand("protect", "compute protective perturbations for a target subject");
  add_common(protect);
  add_data(protect, true);
  protect->add_option("--target", o.target, "target subject index");

  auto* analyze = app.add_subcommand("analyze", "gradient, frequency, PCA and selection studies");
  analyze->require_subcommand(1);
  std::vector<CLI::App*> analyses;
  for (const char* name : {"grads", "freq", "pca", "theorem1"}) {
    auto* a = analyze->add_subcommand(name);
    add_common(a);
    if (std::string(name) == "theorem1") {
      a->add_option("--profile", o.profile, "step500, monotone, bump or all");
    } else {
      add_data(a, true);
      a->add_option("--target", o.target, "target subject index");
    }
    analyses.push_back(a);
  }

  auto* customize = app.add_subcommand("customize", "fine-tune a victim on a target's images and sample from it");
  add_common(customize);
  add_data(customize, true);
  customize->add_option("--target", o.target, "target subject index");
  customize->add_option("--images", o.images, "stacked training images (default: the clean train images)")
      ->check(existing);

  auto* evaluate = app.add_subcommand("evaluate", "paired clean / protected victim evaluation");
  add_common(evaluate);
  add_data(evaluate, true);
  evaluate->add_option("--target", o.target, "target subject index");
  evaluate->add_option("--protected", o.protected_path, "protected.tns from protect")->required()->check(existing);
  evaluate->add_option("--victim-model", o.victim_model, "independently trained base model for the mismatch arm")
      ->check(existing);

  auto* ablate = app.add_subcommand("ablate", "protect + evaluate over the configured grid");
  add_common(ablate);
  add_data(ablate, true);
  ablate->add_option("--target", o.target, "target subject index");

  auto* verify = app.add_subcommand("verify", "run self-checks, or replay a recorded run");
  verify->add_option("--manifest", o.manifest, "manifest.txt of the run to replay")->check(existing);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (verify->parsed()) return stage_verify(o);

  Stopwatch sw;
  CLI::App* sub = app.get_subcommands().front();
  std::string name = sub->get_name();
  if (sub == analyze) name += " " + analyze->get_subcommands().front()->get_name();
  Stage st(name, args, o.config, o.out);
  if (synth->parsed())
    stage_synth(st);
  else if (train->parsed())
    stage_train_base(st, o);
  else if (protect->parsed())
    stage_protect(st, o);
  else if (analyze->parsed())
    stage_analyze(st, analyze->get_subcommands().front()->get_name(), o);
  else if (customize->parsed())
    stage_customize(st, o);
  else if (evaluate->parsed())
    stage_evaluate(st, o);
  else if (ablate->parsed())
    stage_ablate(st, o);
  st.finish(sw.seconds());
  note("done in " + harness::format_double(sw.seconds()) + " s, outputs in " + st.out.string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const usage_error& e) {
    std::cerr << "simac: " << e.what() << '\n';
    return kExitUsage;
  } catch (const harness::config_error& e) {
    std::cerr << "simac: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const io::format_error& e) {
    std::cerr << "simac: bad input file: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "simac: " << e.what() << '\n';
    return kExitFailure;
  }
}
