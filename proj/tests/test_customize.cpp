#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "simac/customize/ablation.hpp"

using namespace simac;
using namespace simac::customize;

namespace {

constexpr std::size_t kSize = 16;

SubjectOptions small_render() {
  SubjectOptions o;
  o.image_size = kSize;
  o.max_shift = 1;
  return o;
}

double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::vector<Subject> two_subjects() {
  // Blobs placed far apart so the pair is trivially separable.
  std::vector<Subject> out;
  Rng rng(21);
  for (int k = 0; k < 2; ++k) {
    Subject s;
    s.id = k;
    s.params.background = 0.3;
    s.params.stripe_amp = 0.05;
    for (auto& b : s.params.blobs) {
      b.cx = k == 0 ? 4.0 : 12.0;
      b.cy = k == 0 ? 4.0 : 12.0;
      b.sigma = 2.0;
      b.amplitude = 0.5;
    }
    const auto opt = small_render();
    for (int i = 0; i < 4; ++i) s.train.push_back(jittered_image(s.params, opt, rng));
    for (int i = 0; i < 3; ++i) s.heldout.push_back(jittered_image(s.params, opt, rng));
    out.push_back(std::move(s));
  }
  return out;
}

EncoderOptions quick_encoder() {
  EncoderOptions o;
  o.steps = 150;
  o.renders_per_subject = 8;
  o.embed_dim = 8;
  return o;
}

diffusion::Denoiser tiny_base(const diffusion::NoiseSchedule& sched) {
  Rng rng(3);
  diffusion::DenoiserConfig cfg;
  cfg.image_size = kSize;
  cfg.n_conditions = 4;
  return diffusion::Denoiser(cfg, sched, rng);
}

EvalConfig quick_eval() {
  EvalConfig c;
  c.finetune_steps = 4;
  c.finetune_batch = 2;
  c.n_samples = 2;
  return c;
}

void expect_same(const ArmMetrics& a, const ArmMetrics& b) {
  EXPECT_EQ(a.ism_proxy, b.ism_proxy);
  EXPECT_EQ(a.artifact_energy, b.artifact_energy);
  EXPECT_EQ(a.recon_error, b.recon_error);
}

}  // namespace

TEST(Subjects, DeterministicAndInUnitRange) {
  Rng a(1), b(1);
  const auto ca = synth_corpus(5, 3, a, small_render()), cb = synth_corpus(5, 3, b, small_render());
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(ca[k].id, static_cast<int>(k));
    ASSERT_EQ(ca[k].train.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(ca[k].train[i].to_vector(), cb[k].train[i].to_vector());
      for (double v : ca[k].train[i].data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
  EXPECT_THROW(synth_corpus(0, 3, a), std::invalid_argument);
}

TEST(Subjects, WithinSubjectCloserThanBetween) {
  Rng rng(2);
  const auto c = synth_corpus(20, 4, rng);
  double within = 0.0, between = 0.0;
  std::size_t nw = 0, nb = 0;
  for (std::size_t a = 0; a < c.size(); ++a)
    for (std::size_t b = a; b < c.size(); ++b)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          if (a == b && i >= j) continue;
          const double d = sq_dist(c[a].train[i], c[b].train[j]);
          if (a == b) within += d, ++nw;
          else between += d, ++nb;
        }
  EXPECT_LT(within / nw, between / nb);
}

TEST(Subjects, ImageSetBindsSubjectIds) {
  Rng rng(3);
  const auto c = synth_corpus(3, 2, rng, small_render());
  const auto set = to_image_set(c);
  ASSERT_EQ(set.images.size(), 6u);
  EXPECT_EQ(set.conds, (std::vector<int>{0, 0, 1, 1, 2, 2}));
}

TEST(IdentityEncoder, SeparatesEasySubjects) {
  Rng rng(4);
  const auto corpus = two_subjects();
  const auto enc = train_identity_encoder(corpus, rng, quick_encoder());
  EXPECT_DOUBLE_EQ(enc.accuracy(), 1.0);
  const auto e = enc.embed({corpus[0].heldout[0], corpus[0].heldout[0]});
  EXPECT_NEAR(cosine(e[0], e[0]), 1.0, 1e-12);
  EXPECT_EQ(e[0], e[1]);
  for (auto& s : corpus) {
    const double v = ism_proxy(enc, s.heldout, reference_embedding(enc, s.train));
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(IdentityEncoder, TrainingIsDeterministic) {
  const auto corpus = two_subjects();
  Rng a(5), b(5);
  const auto ea = train_identity_encoder(corpus, a, quick_encoder());
  const auto eb = train_identity_encoder(corpus, b, quick_encoder());
  EXPECT_EQ(ea.embed(corpus[1].heldout), eb.embed(corpus[1].heldout));
}

TEST(IdentityEncoder, IndistinguishableSubjectsFailTheAccuracyFloor) {
  auto corpus = two_subjects();
  corpus[1] = corpus[0];
  corpus[1].id = 1;
  Rng rng(6);
  EXPECT_THROW(train_identity_encoder(corpus, rng, quick_encoder()), encoder_error);
  Rng r2(6);
  EXPECT_THROW(train_identity_encoder({corpus[0]}, r2), std::invalid_argument);
}

TEST(Metrics, ArtifactEnergyIsAFraction) {
  Rng rng(7);
  EXPECT_DOUBLE_EQ(artifact_energy({Tensor::full({1, 8, 8}, 0.4)}), 0.0);
  std::vector<double> cb(64);
  for (std::size_t i = 0; i < 64; ++i) cb[i] = ((i / 8 + i % 8) % 2) ? 1.0 : 0.0;
  EXPECT_NEAR(artifact_energy({Tensor::from({1, 8, 8}, cb)}), 1.0, 1e-12);
  const double v = artifact_energy({rng.normal_tensor({1, 8, 8})});
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1.0);
}

TEST(Evaluate, ZeroPerturbationMatchesNone) {
  const auto sched = diffusion::schedule_linear(20);
  const auto base = tiny_base(sched);
  const auto corpus = two_subjects();
  Rng rng(8);
  const auto enc = train_identity_encoder(corpus, rng, quick_encoder());
  const EvalSeeds seeds{1, 2, 3};
  const auto none = evaluate_protection(base, sched, corpus[0], 2, std::nullopt, enc, quick_eval(), seeds);
  const auto zero = evaluate_protection(base, sched, corpus[0], 2, attack::Perturbation::zero(corpus[0].train, 0.1),
                                        enc, quick_eval(), seeds);
  expect_same(none.clean, none.shielded);
  expect_same(zero.clean, none.clean);
  expect_same(zero.shielded, none.shielded);
  EXPECT_DOUBLE_EQ(none.ism_drop(), 0.0);
  EXPECT_THROW(evaluate_protection(base, sched, corpus[0], 2, attack::Perturbation::zero(corpus[1].heldout, 0.1),
                                   enc, quick_eval(), seeds),
               std::invalid_argument);

  std::ostringstream os;
  write_report_csv(os, {{"simac", zero}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "arm,ism_proxy_clean,ism_proxy_protected,ism_drop,artifact_energy_clean,artifact_energy_protected,"
            "recon_error_clean,recon_error_protected,recon_gap");
}

TEST(Evaluate, SameBaseGivesIdenticalMismatchArms) {
  const auto sched = diffusion::schedule_linear(20);
  const auto base = tiny_base(sched);
  const auto corpus = two_subjects();
  Rng rng(9);
  const auto enc = train_identity_encoder(corpus, rng, quick_encoder());
  attack::AttackConfig acfg;
  acfg.epochs = 1;
  acfg.search_steps = 2;
  const auto r = mismatch_eval(base, base, sched, corpus[1], 1, enc, acfg, quick_eval(), {4, 5, 6});
  expect_same(r.matched.clean, r.mismatched.clean);
  expect_same(r.matched.shielded, r.mismatched.shielded);
}

TEST(Ablation, GridExpansionOrderAndValidation) {
  AblationGrid g;
  g.taps = {"shallow", "deep"};
  g.etas = {4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0};
  g.selection = {true, false};
  const auto cells = expand_grid(g);
  ASSERT_EQ(cells.size(), 12u);
  EXPECT_EQ(cells[0].id, "c0");
  EXPECT_EQ(cells[0].taps, "shallow");
  EXPECT_TRUE(cells[0].selection);
  EXPECT_FALSE(cells[1].selection);
  EXPECT_EQ(cells[2].eta, 8.0 / 255.0);
  EXPECT_EQ(cells[11].taps, "deep");
  EXPECT_EQ(cells[11].apply({}).tap_layers, (std::vector<int>{4, 5}));
  g.taps = {"middle"};
  EXPECT_THROW(expand_grid(g), std::invalid_argument);
  g.taps = {};
  EXPECT_THROW(expand_grid(g), std::invalid_argument);
}

TEST(Ablation, SingleCellMatchesDirectProtect) {
  const auto sched = diffusion::schedule_linear(20);
  const auto base = tiny_base(sched);
  const auto corpus = two_subjects();
  Rng rng(10);
  const auto enc = train_identity_encoder(corpus, rng, quick_encoder());
  AblationCell cell;
  cell.id = "c0";
  cell.lambda = 0.0;
  cell.selection = false;
  cell.epochs = 1;
  attack::AttackConfig acfg;
  acfg.seed = 31;
  const auto rows = ablation_suite(base, sched, corpus[0], 0, enc, acfg, {cell}, quick_eval(), {7, 8, 9});
  ASSERT_EQ(rows.size(), 1u);
  const auto direct = attack::protect(base, sched, corpus[0].train, 0, cell.apply(acfg));
  for (std::size_t i = 0; i < direct.perturbation.delta.size(); ++i)
    EXPECT_EQ(rows[0].perturbation.delta[i].to_vector(), direct.perturbation.delta[i].to_vector());
  expect_same(rows[0].shielded, evaluate_victim(base, sched, direct.perturbation.perturbed_images(), corpus[0], 0, enc,
                                                quick_eval(), {7, 8, 9}));

  std::ostringstream os;
  write_ablation_csv(os, rows);
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "cell_id,eta,lambda,epochs,selection,tap_layers,ism_proxy_clean,ism_proxy_protected,"
            "artifact_energy_clean,artifact_energy_protected,recon_gap,wallclock_s");
  EXPECT_NE(text.find("\nc0,"), std::string::npos);
  EXPECT_THROW(ablation_suite(base, sched, corpus[0], 0, enc, acfg, {}, quick_eval(), {}), std::invalid_argument);
}
