#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dvnet/core/parallel.hpp"
#include "dvnet/io/tiling.hpp"
#include "dvnet/io/volume_io.hpp"
#include "dvnet/ivote/ivote.hpp"
#include "dvnet/net/network.hpp"
#include "dvnet/phantom/phantom.hpp"
#include "dvnet/vessel/tracer.hpp"

namespace dvnet {

struct PipelineParams {
  Index3 tile{128, 128, 128};
  std::int64_t overlap = 32;
  /// Tiles read ahead of the inference workers.
  std::size_t queue_capacity = 2;
  /// Inference workers; 0 means one per execution thread.
  int workers = 0;
  bool detect_cells = true;
  bool trace_vessels = true;
  int cell_max_radius = 6;
  IVoteParams ivote;
  TracerParams tracer;
};

/// Stitched network output.
struct Segmentation {
  LabelVolume labels;
  /// round(255 p) per class.
  std::vector<LabelVolume> probabilities;
  std::size_t tiles = 0;
};

struct PipelineResult {
  Segmentation segmentation;
  CellList cells;
  VesselGraph vessels;
};

inline std::string class_name(int c) {
  switch (c) {
    case tissue: return "tissue";
    case cell: return "cell";
    case vessel: return "vessel";
    default: return "class" + std::to_string(c);
  }
}

/// Per-class probabilities of a whole region. Extents that are not multiples
/// of 2^levels are padded by edge replication and cropped back afterwards.
inline std::vector<Volume<float>> predict_region(const Network<float>& net, const Volume<float>& v) {
  const auto div = net.config.required_divisor();
  auto round_up = [&](std::int64_t n) { return (n + div - 1) / div * div; };
  const std::int64_t px = round_up(v.nx()), py = round_up(v.ny()), pz = round_up(v.nz());
  Tensor<float> input(Shape{1, 1, pz, py, px});
  for (std::int64_t z = 0; z < pz; ++z)
    for (std::int64_t y = 0; y < py; ++y)
      for (std::int64_t x = 0; x < px; ++x)
        input[(z * py + y) * px + x] = v.at(std::min(x, v.nx() - 1), std::min(y, v.ny() - 1), std::min(z, v.nz() - 1));
  const auto probs = predict(net, input);
  std::vector<Volume<float>> out;
  const std::int64_t pv = px * py * pz;
  for (std::int64_t c = 0; c < probs.channels(); ++c) {
    Volume<float> p(v.nx(), v.ny(), v.nz());
    p.voxel_size = v.voxel_size;
    for (std::int64_t z = 0; z < v.nz(); ++z)
      for (std::int64_t y = 0; y < v.ny(); ++y) {
        const float* src = probs.data() + c * pv + (z * py + y) * px;
        std::copy(src, src + v.nx(), &p.at(0, y, z));
      }
    out.push_back(std::move(p));
  }
  return out;
}

/// Argmax over per-class volumes, lowest class on ties.
inline LabelVolume argmax_classes(const std::vector<Volume<float>>& probs) {
  require(!probs.empty(), "pipeline", "no class probabilities");
  LabelVolume out(probs[0].nx(), probs[0].ny(), probs[0].nz());
  out.voxel_size = probs[0].voxel_size;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c)
      if (probs[c].data[i] > probs[best].data[i]) best = c;
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

/// Tiled eval-mode inference. A reader thread feeds tiles through a bounded
/// queue to inference workers that share the read-only network; each tile's
/// core is stitched into the output. Labels come from the unquantized
/// probabilities, so they do not depend on the 8-bit storage.
inline Segmentation segment(const Network<float>& net, const Volume<float>& volume, const PipelineParams& p) {
  const auto& cfg = net.config;
  require(cfg.spatial_rank == 3, "pipeline", "checkpoint is a " + std::to_string(cfg.spatial_rank) + "-d network; volumes need 3-d");
  require(cfg.input_channels == 1, "pipeline",
          "checkpoint expects " + std::to_string(cfg.input_channels) + " input channels; volumes have 1");
  const auto layout = split_tiles(volume.extents, p.tile, p.overlap);
  const auto classes = static_cast<std::size_t>(cfg.num_classes);

  Stitcher<std::uint8_t> labels(layout);
  std::vector<Stitcher<std::uint8_t>> probs(classes, Stitcher<std::uint8_t>(layout));
  std::mutex stitch_mutex;

  BoundedQueue<std::pair<std::size_t, Volume<float>>> queue(p.queue_capacity);
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto fail = [&] {
    std::lock_guard lock(error_mutex);
    if (!error) error = std::current_exception();
    failed = true;
    queue.close();
  };

  const int workers = std::max(1, p.workers > 0 ? p.workers : execution().threads);
  std::thread reader([&] {
    try {
      for (std::size_t i = 0; i < layout.tiles.size() && !failed; ++i) queue.push({i, extract(volume, layout.tiles[i].region)});
    } catch (...) {
      fail();
    }
    queue.close();
  });
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      // With several tile workers each one runs its kernels single-threaded.
      std::optional<SerialScope> serial;
      if (workers > 1) serial.emplace();
      try {
        while (auto item = queue.pop()) {
          auto tile_probs = predict_region(net, item->second);
          const auto tile_labels = argmax_classes(tile_probs);
          std::vector<LabelVolume> q;
          for (const auto& t : tile_probs) q.push_back(quantized(t));
          std::lock_guard lock(stitch_mutex);
          labels.place(item->first, tile_labels);
          for (std::size_t c = 0; c < classes; ++c) probs[c].place(item->first, q[c]);
        }
      } catch (...) {
        fail();
      }
    });
  reader.join();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  Segmentation s;
  s.labels = labels.finish();
  s.labels.voxel_size = volume.voxel_size;
  for (auto& st : probs) {
    s.probabilities.push_back(st.finish());
    s.probabilities.back().voxel_size = volume.voxel_size;
  }
  s.tiles = layout.tiles.size();
  return s;
}

/// Segmentation followed by cell detection on the cell probability and vessel
/// tracing on the vessel probability.
inline PipelineResult run_pipeline(const Network<float>& net, const Volume<float>& volume, const PipelineParams& p) {
  PipelineResult r;
  r.segmentation = segment(net, volume, p);
  const auto& probs = r.segmentation.probabilities;
  if (p.detect_cells && probs.size() > cell) r.cells = detect_cells(normalized(probs[cell]), p.cell_max_radius, p.ivote);
  if (p.trace_vessels && probs.size() > vessel) r.vessels = build_graph(normalized(probs[vessel]), p.tracer);
  return r;
}

/// Counts and graph statistics of a pipeline run as JSON.
inline std::string pipeline_summary_json(const PipelineResult& r) {
  nlohmann::ordered_json j;
  const auto& labels = r.segmentation.labels;
  j["extents"] = labels.extents;
  j["tiles"] = r.segmentation.tiles;
  nlohmann::ordered_json voxels;
  std::vector<std::size_t> count(r.segmentation.probabilities.size(), 0);
  for (auto l : labels.data)
    if (l < count.size()) ++count[l];
  for (std::size_t c = 0; c < count.size(); ++c) voxels[class_name(static_cast<int>(c))] = count[c];
  j["voxels"] = voxels;
  j["cells"] = r.cells.size();
  j["vessels"] = nlohmann::ordered_json::parse(summary_json(summarize(r.vessels)));
  return j.dump(2) + "\n";
}

/// Writes labels.raw, prob_<class>.raw, cells.csv, vessels.graph and
/// summary.json into `dir`.
inline void write_pipeline_outputs(const PipelineResult& r, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(fs::is_directory(dir), "pipeline", "cannot create output directory " + dir);
  const fs::path out(dir);
  save_volume(r.segmentation.labels, (out / "labels.raw").string());
  for (std::size_t c = 0; c < r.segmentation.probabilities.size(); ++c)
    save_volume(r.segmentation.probabilities[c], (out / ("prob_" + class_name(static_cast<int>(c)) + ".raw")).string());
  save_cells(r.cells, (out / "cells.csv").string());
  save_graph(r.vessels, (out / "vessels.graph").string());
  std::ofstream js(out / "summary.json");
  require(static_cast<bool>(js), "pipeline", "cannot write " + (out / "summary.json").string());
  js << pipeline_summary_json(r);
}

}  // namespace dvnet
