#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "simac/harness/data_io.hpp"
#include "simac/harness/invariants.hpp"
#include "simac/harness/manifest.hpp"

using namespace simac;
using namespace simac::harness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("simac-test-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST(KeyValue, ParsesCommentsRationalsAndLists) {
  const auto cfg = parse_run_config(
      "# comment\n"
      "seed = 42\n"
      "  eta = 8/255   # trailing comment\n"
      "ablate_eta = 4/255, 8/255\n"
      "tap_layers = 2,3\n"
      "selection_enabled = false\n"
      "magnitude = power\n");
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_DOUBLE_EQ(cfg.attack.eta, 8.0 / 255.0);
  EXPECT_EQ(cfg.ablate_eta, (std::vector<double>{4.0 / 255.0, 8.0 / 255.0}));
  EXPECT_EQ(cfg.attack.tap_layers, (std::vector<int>{2, 3}));
  EXPECT_FALSE(cfg.attack.selection_enabled);
  EXPECT_EQ(cfg.magnitude_kind(), analysis::MagnitudeKind::power);
}

TEST(KeyValue, RejectsMalformedInput) {
  EXPECT_THROW(parse_run_config("eta = 1/255\n"), config_error);  // seed is required
  EXPECT_THROW(parse_run_config("seed = 1\nseed = 2\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = 1\nbogus = 3\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = 1\neta\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = 1\neta = 1/0\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = 1\nepochs = 2.5\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = -1\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = 1\nmagnitude = loud\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = 1\nfreq_ranges = 0,100,700\n"), config_error);
  EXPECT_THROW(parse_run_config("seed = 1\nimage_size = 12\n"), config_error);
  EXPECT_THROW(config_load("/nonexistent/simac.cfg"), config_error);
}

TEST(KeyValue, FormatDoubleRoundTrips) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.integer(-20, 20));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(RunConfig, RandomConfigsRoundTrip) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    RunConfig cfg;
    cfg.seed = rng.bits();
    cfg.attack.eta = static_cast<double>(rng.integer(1, 64)) / 255.0;
    cfg.attack.lambda = rng.uniform(0.0, 10.0);
    cfg.attack.selection_enabled = rng.uniform() < 0.5;
    cfg.n_samples = static_cast<int>(rng.integer(1, 50));
    cfg.ablate_eta = {rng.uniform(0.001, 0.2), rng.uniform(0.001, 0.2)};
    cfg.ablate_taps = {trial % 2 ? "shallow" : "mid", "deep"};
    cfg.beta_max = rng.uniform(0.01, 0.05);
    const auto text = config_dump(cfg);
    const auto back = parse_run_config(text);
    EXPECT_EQ(config_dump(back), text);
    EXPECT_EQ(back.seed, cfg.seed);
    EXPECT_EQ(back.attack.eta, cfg.attack.eta);
    EXPECT_EQ(back.ablate_eta, cfg.ablate_eta);
    EXPECT_EQ(back.beta_max, cfg.beta_max);
  }
}

TEST(RunConfig, SubstreamsAndTargetIds) {
  RunConfig cfg;
  cfg.seed = 9;
  EXPECT_EQ(cfg.attack_config().seed, substream_seed(9, "attack"));
  const auto s = cfg.eval_seeds();
  EXPECT_NE(s.victim, s.generation);
  EXPECT_EQ(cfg.target_condition(0), cfg.n_subjects);
}

TEST(Manifest, RenderParseRoundTrip) {
  const auto dir = fresh_dir("manifest");
  write_text(dir / "a.txt", "alpha");
  write_text(dir / "b.csv", "beta");
  RunManifest m;
  m.stage = "protect";
  m.args = {"protect", "--config", "x.cfg", "--out", "o"};
  m.config_text = "seed = 3\neta = 0.0627\n";
  m.seeds["root"] = 3;
  m.inputs = {"x.cfg"};
  m.wallclock["total"] = 1.25;
  m.record_output(dir, "a.txt");
  m.record_output(dir, "b.csv", true);
  const auto text = m.render();
  const auto back = RunManifest::parse(text);
  EXPECT_EQ(back.render(), text);
  EXPECT_EQ(back.run_id(), m.run_id());
  EXPECT_EQ(back.checksums.at("a.txt"), hex64(fnv1a64("alpha")));
  EXPECT_TRUE(back.mismatches(dir).empty());

  write_text(dir / "b.csv", "changed");
  EXPECT_TRUE(back.mismatches(dir).empty());  // volatile
  EXPECT_EQ(back.mismatches(dir, true), (std::vector<std::string>{"b.csv"}));
  fs::remove(dir / "a.txt");
  EXPECT_EQ(back.mismatches(dir), (std::vector<std::string>{"a.txt"}));
  fs::remove_all(dir);
}

TEST(Manifest, TamperingIsDetected) {
  RunManifest m;
  m.stage = "synth";
  m.args = {"synth"};
  m.config_text = "seed = 1\n";
  auto text = m.render();
  EXPECT_NO_THROW(RunManifest::parse(text));
  auto tampered = text;
  tampered.replace(tampered.find("seed = 1"), 8, "seed = 2");
  EXPECT_THROW(RunManifest::parse(tampered), config_error);
  EXPECT_THROW(RunManifest::parse(text + "mystery = 1\n"), config_error);
  EXPECT_THROW(RunManifest::parse(text + "checksum 12 a\n"), config_error);
}

TEST(Manifest, RunIdIgnoresOutputDirectory) {
  RunManifest a, b;
  a.stage = b.stage = "synth";
  a.args = {"synth", "--config", "c.cfg", "--out", "one"};
  b.args = {"synth", "--config", "c.cfg", "--out", "two"};
  EXPECT_EQ(a.run_id(), b.run_id());
  b.args[2] = "d.cfg";
  EXPECT_NE(a.run_id(), b.run_id());
}

TEST(Manifest, KnownChecksum) {
  // FNV-1a 64 reference values.
  EXPECT_EQ(fnv1a64(""), 0xCBF29CE484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xAF63DC4C8601EC8Cull);
  EXPECT_EQ(hex64(0xABCull), "0000000000000abc");
}

TEST(DataIo, CorpusRoundTrip) {
  RunConfig cfg = parse_run_config("seed = 5\nimage_size = 16\nn_subjects = 3\nn_targets = 2\nimages_per_subject = 2\n");
  const auto corpus = make_corpus(cfg);
  ASSERT_EQ(corpus.targets.size(), 2u);
  EXPECT_EQ(corpus.targets[1].id, 4);
  const auto dir = fresh_dir("corpus");
  const auto files = save_corpus(dir, corpus);
  EXPECT_EQ(files.size(), 1u + 2u * 5u);
  const auto back = load_corpus(dir);
  ASSERT_EQ(back.subjects.size(), 3u);
  ASSERT_EQ(back.targets.size(), 2u);
  const auto a = corpus.all(), b = back.all();
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].id, b[k].id);
    EXPECT_EQ(a[k].params.stripe_phase, b[k].params.stripe_phase);
    ASSERT_EQ(a[k].train.size(), b[k].train.size());
    for (std::size_t i = 0; i < a[k].train.size(); ++i) EXPECT_EQ(a[k].train[i].to_vector(), b[k].train[i].to_vector());
    for (std::size_t i = 0; i < a[k].heldout.size(); ++i)
      EXPECT_EQ(a[k].heldout[i].to_vector(), b[k].heldout[i].to_vector());
  }
  // Same seed, same corpus bytes.
  const auto dir2 = fresh_dir("corpus2");
  save_corpus(dir2, make_corpus(cfg));
  for (auto& f : files) EXPECT_EQ(file_checksum(dir / f), file_checksum(dir2 / f)) << f;

  write_text(dir / "subjects.csv", "wrong header\n");
  EXPECT_THROW(load_corpus(dir), io::format_error);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Invariants, SuiteAllPasses) {
  for (auto& r : run_invariant_suite()) EXPECT_TRUE(r.ok) << r.name << ": " << r.detail;
}
