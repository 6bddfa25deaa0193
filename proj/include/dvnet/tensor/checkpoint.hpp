#pragma once

// Single-file checkpoint:
//
//   DVNETCKPT <version>\n
//   config <n>\n<n bytes of key=value text>
//   manifest <count>\n
//   <name> <offset> <nbytes> <rank> <d0> ... \n     (one line per tensor)
//   data\n
//   <raw little-endian float32 blocks at the manifest offsets>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/tensor/tensor.hpp"

namespace dvnet {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream header;
  header << "DVNETCKPT " << kCheckpointVersion << '\n';
  header << "config " << ckpt.config_text.size() << '\n' << ckpt.config_text;
  header << "manifest " << ckpt.entries.size() << '\n';
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.entries) {
    require(e.name.find_first_of(" \t\n") == std::string::npos, "checkpoint", "tensor name contains whitespace");
    require(static_cast<std::int64_t>(e.values.size()) == shape_numel(e.shape), "checkpoint",
            "tensor " + e.name + " has inconsistent shape");
    const std::uint64_t bytes = e.values.size() * sizeof(float);
    header << e.name << ' ' << offset << ' ' << bytes << ' ' << e.shape.size();
    for (auto d : e.shape) header << ' ' << d;
    header << '\n';
    offset += bytes;
  }
  header << "data\n";

  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "checkpoint", "cannot write " + path);
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& e : ckpt.entries)
    for (float f : e.values) {
      const std::uint32_t w = detail::to_little_endian(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&w), sizeof w);
    }
  require(static_cast<bool>(out), "checkpoint", "write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "checkpoint", "cannot open " + path);
  std::string line, tag;
  int version = 0;
  std::getline(in, line);
  std::istringstream(line) >> tag >> version;
  require(tag == "DVNETCKPT", "checkpoint", path + " is not a checkpoint");
  require(version == kCheckpointVersion, "checkpoint", "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  std::size_t config_bytes = 0;
  std::getline(in, line);
  std::istringstream(line) >> tag >> config_bytes;
  require(tag == "config", "checkpoint", "missing config section");
  ckpt.config_text.resize(config_bytes);
  in.read(ckpt.config_text.data(), static_cast<std::streamsize>(config_bytes));

  std::size_t count = 0;
  std::getline(in, line);
  std::istringstream(line) >> tag >> count;
  require(tag == "manifest", "checkpoint", "missing manifest");
  struct Placement {
    std::uint64_t offset, bytes;
  };
  std::vector<Placement> placements;
  for (std::size_t i = 0; i < count; ++i) {
    std::getline(in, line);
    std::istringstream ls(line);
    CheckpointEntry e;
    Placement p{};
    std::size_t rank = 0;
    ls >> e.name >> p.offset >> p.bytes >> rank;
    e.shape.resize(rank);
    for (auto& d : e.shape) ls >> d;
    require(static_cast<bool>(ls), "checkpoint", "malformed manifest line: " + line);
    require(p.bytes == static_cast<std::uint64_t>(shape_numel(e.shape)) * sizeof(float), "checkpoint",
            "manifest byte count disagrees with shape for " + e.name);
    ckpt.entries.push_back(std::move(e));
    placements.push_back(p);
  }
  std::getline(in, line);
  require(line == "data", "checkpoint", "missing data section");
  const auto data_start = in.tellg();
  for (std::size_t i = 0; i < count; ++i) {
    in.seekg(data_start + static_cast<std::streamoff>(placements[i].offset));
    auto& values = ckpt.entries[i].values;
    values.resize(placements[i].bytes / sizeof(float));
    for (auto& f : values) {
      std::uint32_t w = 0;
      in.read(reinterpret_cast<char*>(&w), sizeof w);
      f = std::bit_cast<float>(detail::to_little_endian(w));
    }
    require(static_cast<bool>(in), "checkpoint", "truncated data for " + ckpt.entries[i].name);
  }
  return ckpt;
}

}  // namespace dvnet
