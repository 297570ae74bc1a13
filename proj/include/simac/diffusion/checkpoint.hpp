#pragma once

// DNZ1 checkpoint, little-endian:
//   "DNZ1" | u32 entry count | per entry: u32 name length, name bytes, TNS1 tensor
// Entries are the trainable parameters followed by fixed buffers.

#include <filesystem>
#include <fstream>

#include "simac/diffusion/denoiser.hpp"
#include "simac/tensor_io.hpp"

namespace simac::diffusion {

inline void write_checkpoint(std::ostream& os, const Denoiser& model) {
  os.write("DNZ1", 4);
  const auto params = model.named_tensors();
  io::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (auto& [name, t] : params) {
    io::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_tensor(os, t);
  }
}

inline Denoiser read_checkpoint(std::istream& is) {
  io::expect_magic(is, "DNZ1");
  const auto count = io::read_u32(is);
  Denoiser::NamedParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::read_u32(is);
    if (len > 4096) throw io::format_error("implausible parameter name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw io::format_error("truncated parameter name");
    params.emplace_back(std::move(name), io::read_tensor(is));
  }
  return Denoiser::from_tensors(std::move(params));
}

inline void save_checkpoint(const std::filesystem::path& path, const Denoiser& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, model);
}

inline Denoiser load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace simac::diffusion
