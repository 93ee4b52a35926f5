#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mib/errors.hpp"
#include "mib/jsonio.hpp"
#include "mib/tensor.hpp"

// Checkpoint directory layout: manifest.json lists {name, shape, dtype} per
// tensor; each tensor's raw little-endian float32 payload sits in a file of
// the same name. Round-trips are bit-exact.

namespace mib {

using NamedTensors = std::vector<std::pair<std::string, TensorF>>;

namespace detail {

inline void check_tensor_name(const std::string& name) {
  if (name.empty() || name == "manifest.json" ||
      name.find('/') != std::string::npos || name.find("..") != std::string::npos)
    throw DataError("checkpoint: unusable tensor name '" + name + "'");
}

inline void write_f32_le(std::ofstream& out, const std::vector<float>& vals) {
  for (float f : vals) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                           static_cast<char>((u >> 16) & 0xff),
                           static_cast<char>((u >> 24) & 0xff)};
    out.write(bytes, 4);
  }
}

inline std::vector<float> read_f32_le(std::ifstream& in, std::size_t count,
                                      const std::string& what) {
  std::vector<char> raw(count * 4);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw DataError("checkpoint: " + what + " is shorter than its manifest shape");
  char extra;
  if (in.read(&extra, 1), in.gcount() != 0)
    throw DataError("checkpoint: " + what + " is longer than its manifest shape");
  std::vector<float> vals(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto* b = reinterpret_cast<const unsigned char*>(raw.data() + i * 4);
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                            (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    vals[i] = std::bit_cast<float>(u);
  }
  return vals;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir,
                            const NamedTensors& tensors) {
  std::filesystem::create_directories(dir);
  json manifest = json::array();
  for (const auto& [name, t] : tensors) {
    detail::check_tensor_name(name);
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}});
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + (dir / name).string());
    detail::write_f32_le(out, t.values());
  }
  write_json_file(dir / "manifest.json", manifest);
}

inline NamedTensors load_checkpoint(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  if (!manifest.is_array())
    throw DataError("checkpoint: manifest.json in " + dir.string() + " is not a list");
  NamedTensors out;
  for (const auto& entry : manifest) {
    const auto name = entry.at("name").get<std::string>();
    detail::check_tensor_name(name);
    const auto shape = entry.at("shape").get<Shape>();
    if (entry.at("dtype").get<std::string>() != "f32")
      throw DataError("checkpoint: tensor '" + name + "' has unsupported dtype");
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw DataError("checkpoint: missing tensor file " + (dir / name).string());
    auto vals = detail::read_f32_le(in, static_cast<std::size_t>(shape_numel(shape)), name);
    out.emplace_back(name, TensorF::from_values(shape, std::move(vals)));
  }
  return out;
}

}  // namespace mib
