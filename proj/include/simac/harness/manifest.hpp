#pragma once

// Run manifest: a flat text block describing one CLI invocation.
//
//   run_id = 3f0c...
//   stage = protect
//   arg = protect
//   arg = --config
//   ...
//   config.eta = 0.06274509803921569
//   seed.attack = 1234
//   input = data/target_000_train.tns
//   wallclock.protect = 7.41
//   checksum 9ae1c4d2b0f3e87a delta_000.tns
//   volatile ablation.csv
//
// Output paths are relative to the output directory. Volatile outputs carry
// timings and are excluded from replay comparison.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "simac/harness/keyvalue.hpp"

namespace simac::harness {

/// FNV-1a 64 over a byte string.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_checksum(const std::filesystem::path& p) { return hex64(fnv1a64(read_file(p))); }

struct RunManifest {
  std::string stage;
  std::vector<std::string> args;  // argv without the program name
  std::string config_text;        // canonical dump
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::map<std::string, double> wallclock;
  std::map<std::string, std::string> checksums;  // relative output path -> hex
  std::set<std::string> volatile_outputs;

  std::string run_id() const {
    // The output location does not change what a run computes.
    std::string key = stage;
    for (std::size_t i = 0; i < args.size(); ++i) {
      key += '\x1f' + args[i];
      if (args[i] == "--out") ++i;
    }
    key += '\x1e' + config_text;
    return hex64(fnv1a64(key));
  }

  /// Checksums every output under `out_dir`; `is_volatile` marks timing files.
  void record_output(const std::filesystem::path& out_dir, const std::string& rel, bool is_volatile = false) {
    checksums[rel] = file_checksum(out_dir / rel);
    if (is_volatile) volatile_outputs.insert(rel);
  }

  std::string render() const {
    std::ostringstream os;
    os << "run_id = " << run_id() << '\n' << "stage = " << stage << '\n';
    for (auto& a : args) os << "arg = " << a << '\n';
    for (auto& [k, v] : parse_pairs(config_text)) os << "config." << k << " = " << v << '\n';
    for (auto& [k, v] : seeds) os << "seed." << k << " = " << v << '\n';
    for (auto& i : inputs) os << "input = " << i << '\n';
    for (auto& [k, v] : wallclock) os << "wallclock." << k << " = " << format_double(v) << '\n';
    for (auto& [path, sum] : checksums) os << "checksum " << sum << ' ' << path << '\n';
    for (auto& v : volatile_outputs) os << "volatile " << v << '\n';
    return os.str();
  }

  static RunManifest parse(std::string_view text) {
    RunManifest m;
    std::string recorded_id;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      if (line.rfind("checksum ", 0) == 0) {
        std::istringstream ls(line.substr(9));
        std::string sum, path;
        ls >> sum;
        std::getline(ls >> std::ws, path);
        if (sum.size() != 16 || path.empty()) throw config_error("manifest: bad checksum line '" + line + "'");
        m.checksums[path] = sum;
        continue;
      }
      if (line.rfind("volatile ", 0) == 0) {
        m.volatile_outputs.insert(trim(line.substr(9)));
        continue;
      }
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw config_error("manifest: cannot parse '" + line + "'");
      const auto key = line.substr(0, eq);
      const auto value = line.substr(eq + 3);
      if (key == "run_id")
        recorded_id = value;
      else if (key == "stage")
        m.stage = value;
      else if (key == "arg")
        m.args.push_back(value);
      else if (key == "input")
        m.inputs.push_back(value);
      else if (key.rfind("config.", 0) == 0)
        m.config_text += key.substr(7) + " = " + value + '\n';
      else if (key.rfind("seed.", 0) == 0)
        m.seeds[key.substr(5)] = parse_unsigned(key, value);
      else if (key.rfind("wallclock.", 0) == 0)
        m.wallclock[key.substr(10)] = parse_number(key, value);
      else
        throw config_error("manifest: unknown entry '" + key + "'");
    }
    if (recorded_id != m.run_id()) throw config_error("manifest: run_id does not match its contents");
    return m;
  }

  /// Relative paths whose checksum differs in `dir` (missing files included).
  std::vector<std::string> mismatches(const std::filesystem::path& dir, bool include_volatile = false) const {
    std::vector<std::string> bad;
    for (auto& [path, sum] : checksums) {
      if (!include_volatile && volatile_outputs.count(path)) continue;
      if (!std::filesystem::exists(dir / path) || file_checksum(dir / path) != sum) bad.push_back(path);
    }
    return bad;
  }
};

}  // namespace simac::harness
