#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "dvnet/core/parallel.hpp"
#include "dvnet/io/volume_io.hpp"
#include "dvnet/phantom/phantom.hpp"
#include "dvnet/train/augment.hpp"

namespace dvnet {

/// Training sample from an intensity volume and its class labels.
inline Sample volume_sample(const Volume<float>& image, const LabelVolume& labels) {
  require(image.extents == labels.extents, "dataset", "image and label extents differ");
  const auto& e = image.extents;
  return {Tensor<float>(Shape{1, e[2], e[1], e[0]}, std::span<const float>(image.data)),
          Tensor<std::uint8_t>(Shape{e[2], e[1], e[0]}, std::span<const std::uint8_t>(labels.data))};
}

inline Sample phantom_sample(const Phantom& ph) { return volume_sample(ph.image, ph.labels); }

/// Samples of phantoms with seeds first_seed, first_seed + 1, ...
inline std::vector<Sample> phantom_samples(const PhantomParams& params, std::size_t count, std::uint64_t first_seed) {
  std::vector<Sample> out(count);
  parallel_tasks(count, [&](std::size_t i) { out[i] = phantom_sample(gen_phantom(params, first_seed + i)); });
  return out;
}

/// Writes image.raw (float32), labels.raw, cells.csv, vessels.graph and
/// params.txt (generation parameters plus seed) into `dir`.
inline void save_phantom(const Phantom& ph, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(fs::is_directory(dir), "phantom", "cannot create output directory " + dir);
  const fs::path out(dir);
  save_volume(ph.image, (out / "image.raw").string());
  save_volume(ph.labels, (out / "labels.raw").string());
  save_cells(ph.cells, (out / "cells.csv").string());
  save_graph(ph.vessels, (out / "vessels.graph").string());
  std::ofstream params(out / "params.txt");
  require(static_cast<bool>(params), "phantom", "cannot write " + (out / "params.txt").string());
  params << ph.params.to_text() << "# seed=" << ph.seed << '\n';
}

/// Training sample from a directory holding image.raw and labels.raw. 8-bit
/// images are mapped to [0, 1].
inline Sample load_sample_dir(const std::string& dir) {
  const std::filesystem::path in(dir);
  const auto image_path = (in / "image.raw").string();
  const auto header = VolumeHeader::from_text(read_text_file(header_path(image_path), "volume"));
  auto image = header.type == VoxelType::uint8 ? normalized(load_volume<std::uint8_t>(image_path))
                                                : load_volume<float>(image_path);
  return volume_sample(image, load_volume<std::uint8_t>((in / "labels.raw").string()));
}

}  // namespace dvnet
