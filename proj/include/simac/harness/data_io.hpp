#pragma once

// Corpus directory layout:
//
//   subjects.csv                 generator parameters, one row per subject
//   subject_007_train.tns        [n,1,H,W] stacked images
//   subject_007_heldout.tns
//   target_000_train.tns         target k has condition id n_subjects + k
//   target_000_heldout.tns

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "simac/harness/pipeline.hpp"
#include "simac/tensor_io.hpp"

namespace simac::harness {

inline std::string indexed_name(const std::string& prefix, int k, const std::string& suffix) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", k);
  return prefix + "_" + buf + suffix;
}

inline constexpr const char* kSubjectsHeader =
    "kind,index,id,background,b0_cx,b0_cy,b0_sigma,b0_amp,b1_cx,b1_cy,b1_sigma,b1_amp,b2_cx,b2_cy,b2_sigma,b2_amp,"
    "stripe_freq,stripe_angle,stripe_phase,stripe_amp,contrast";

inline void write_subject_row(std::ostream& os, const std::string& kind, int index, const customize::Subject& s) {
  auto f = [](double v) { return format_double(v); };
  const auto& p = s.params;
  os << kind << ',' << index << ',' << s.id << ',' << f(p.background);
  for (auto& b : p.blobs) os << ',' << f(b.cx) << ',' << f(b.cy) << ',' << f(b.sigma) << ',' << f(b.amplitude);
  os << ',' << f(p.stripe_freq) << ',' << f(p.stripe_angle) << ',' << f(p.stripe_phase) << ',' << f(p.stripe_amp)
     << ',' << f(p.contrast) << '\n';
}

/// Writes the corpus and returns the relative names of the files written.
inline std::vector<std::string> save_corpus(const std::filesystem::path& dir, const Corpus& c) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files{"subjects.csv"};
  std::ofstream csv(dir / "subjects.csv", std::ios::binary);
  csv << kSubjectsHeader << '\n';
  auto dump = [&](const std::string& kind, int k, const customize::Subject& s) {
    write_subject_row(csv, kind, k, s);
    for (auto [part, images] : {std::pair{"_train.tns", &s.train}, std::pair{"_heldout.tns", &s.heldout}}) {
      const auto name = indexed_name(kind, k, part);
      io::save_tensor(dir / name, diffusion::stack_images(*images));
      files.push_back(name);
    }
  };
  for (std::size_t i = 0; i < c.subjects.size(); ++i) dump("subject", static_cast<int>(i), c.subjects[i]);
  for (std::size_t k = 0; k < c.targets.size(); ++k) dump("target", static_cast<int>(k), c.targets[k]);
  csv.close();
  if (!csv) throw std::runtime_error("failed to write subjects.csv");
  return files;
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream csv(dir / "subjects.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot open '" + (dir / "subjects.csv").string() + "'");
  std::string line;
  std::getline(csv, line);
  if (line != kSubjectsHeader) throw io::format_error("subjects.csv: unexpected header");
  Corpus c;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 21) throw io::format_error("subjects.csv: expected 21 columns");
    customize::Subject s;
    const auto& kind = cells[0];
    const int index = static_cast<int>(parse_integer("index", cells[1]));
    s.id = static_cast<int>(parse_integer("id", cells[2]));
    std::size_t k = 3;
    auto num = [&] { return parse_number("subjects.csv", cells[k++]); };
    s.params.background = num();
    for (auto& b : s.params.blobs) {
      b.cx = num();
      b.cy = num();
      b.sigma = num();
      b.amplitude = num();
    }
    s.params.stripe_freq = num();
    s.params.stripe_angle = num();
    s.params.stripe_phase = num();
    s.params.stripe_amp = num();
    s.params.contrast = num();
    s.train = diffusion::unstack_images(io::load_tensor(dir / indexed_name(kind, index, "_train.tns")));
    s.heldout = diffusion::unstack_images(io::load_tensor(dir / indexed_name(kind, index, "_heldout.tns")));
    if (kind == "subject")
      c.subjects.push_back(std::move(s));
    else if (kind == "target")
      c.targets.push_back(std::move(s));
    else
      throw io::format_error("subjects.csv: unknown kind '" + kind + "'");
  }
  if (c.subjects.empty()) throw io::format_error("corpus has no subjects");
  return c;
}

}  // namespace simac::harness
