#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/io/volume.hpp"

namespace dvnet {

using Index3 = std::array<std::int64_t, 3>;

/// Axis-aligned box [origin, origin + size) in (x, y, z).
struct Box {
  Index3 origin{0, 0, 0};
  Index3 size{0, 0, 0};

  std::int64_t voxels() const { return size[0] * size[1] * size[2]; }
  bool contains(const Index3& p) const {
    for (int a = 0; a < 3; ++a)
      if (p[a] < origin[a] || p[a] >= origin[a] + size[a]) return false;
    return true;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Tile {
  /// Region read from the volume (core plus overlap margins).
  Box region;
  /// Sub-box of `region` this tile is responsible for in the output.
  Box core;
};

struct TileLayout {
  Index3 extents{0, 0, 0};
  Index3 tile{0, 0, 0};
  std::int64_t overlap = 0;
  std::vector<Tile> tiles;
};

namespace detail {

struct AxisSpan {
  std::int64_t start, size, core_start, core_size;
};

/// Tiles along one axis. Neighbouring cores meet in the middle of the shared
/// overlap, so margins are discarded symmetrically.
inline std::vector<AxisSpan> split_axis(std::int64_t extent, std::int64_t tile, std::int64_t overlap) {
  if (tile >= extent) return {{0, extent, 0, extent}};
  const std::int64_t stride = tile - overlap;
  const std::int64_t count = (extent - overlap + stride - 1) / stride;
  std::vector<std::int64_t> start(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) start[static_cast<std::size_t>(i)] = std::min(i * stride, extent - tile);
  std::vector<AxisSpan> out;
  std::int64_t begin = 0;
  for (std::size_t i = 0; i < start.size(); ++i) {
    const std::int64_t end = i + 1 < start.size() ? (start[i + 1] + start[i] + tile) / 2 : extent;
    out.push_back({start[i], tile, begin, end - begin});
    begin = end;
  }
  return out;
}

}  // namespace detail

/// Overlapped tiling with grid stride tile - overlap; the last tile on each
/// axis is shifted back to end at the boundary. A tile larger than the volume
/// is clamped to it.
inline TileLayout split_tiles(const Index3& extents, const Index3& tile, std::int64_t overlap) {
  for (int a = 0; a < 3; ++a) {
    require(extents[a] > 0, "tiling", "extents must be positive");
    require(tile[a] > overlap && overlap >= 0, "tiling",
            "need tile > overlap >= 0, got tile " + std::to_string(tile[a]) + ", overlap " + std::to_string(overlap));
  }
  TileLayout layout{extents, tile, overlap, {}};
  std::array<std::vector<detail::AxisSpan>, 3> axes;
  for (int a = 0; a < 3; ++a) axes[a] = detail::split_axis(extents[a], tile[a], overlap);
  for (const auto& z : axes[2])
    for (const auto& y : axes[1])
      for (const auto& x : axes[0])
        layout.tiles.push_back({{{x.start, y.start, z.start}, {x.size, y.size, z.size}},
                                {{x.core_start, y.core_start, z.core_start}, {x.core_size, y.core_size, z.core_size}}});
  return layout;
}

inline TileLayout split_tiles(const Index3& extents, std::int64_t tile, std::int64_t overlap) {
  return split_tiles(extents, Index3{tile, tile, tile}, overlap);
}

/// Copies `box` out of `v`.
template <class T>
Volume<T> extract(const Volume<T>& v, const Box& box) {
  Volume<T> out(box.size[0], box.size[1], box.size[2]);
  out.voxel_size = v.voxel_size;
  for (std::int64_t z = 0; z < box.size[2]; ++z)
    for (std::int64_t y = 0; y < box.size[1]; ++y) {
      const auto* src = &v.at(box.origin[0], box.origin[1] + y, box.origin[2] + z);
      std::copy(src, src + box.size[0], &out.at(0, y, z));
    }
  return out;
}

/// Assembles tile outputs in any order into a volume of the layout's extents.
template <class T>
class Stitcher {
 public:
  explicit Stitcher(const TileLayout& layout)
      : layout_(layout), out_(layout.extents[0], layout.extents[1], layout.extents[2]),
        placed_(layout.tiles.size(), false) {}

  /// Writes the core of tile `index`; `output` must match the tile's region.
  void place(std::size_t index, const Volume<T>& output) {
    require(index < layout_.tiles.size(), "stitch", "tile index " + std::to_string(index) + " out of range");
    const auto& t = layout_.tiles[index];
    require(output.extents == t.region.size, "stitch",
            "tile " + std::to_string(index) + " output extents do not match its region");
    for (std::int64_t z = 0; z < t.core.size[2]; ++z)
      for (std::int64_t y = 0; y < t.core.size[1]; ++y) {
        const auto gx = t.core.origin[0], gy = t.core.origin[1] + y, gz = t.core.origin[2] + z;
        const auto* src = &output.at(gx - t.region.origin[0], gy - t.region.origin[1], gz - t.region.origin[2]);
        std::copy(src, src + t.core.size[0], &out_.at(gx, gy, gz));
      }
    placed_[index] = true;
  }

  Volume<T> finish() {
    for (std::size_t i = 0; i < placed_.size(); ++i)
      require(placed_[i], "stitch", "missing output for tile " + std::to_string(i));
    return std::move(out_);
  }

 private:
  TileLayout layout_;
  Volume<T> out_;
  std::vector<bool> placed_;
};

/// One output per tile, in layout order; an empty volume marks a missing tile.
template <class T>
Volume<T> stitch(const TileLayout& layout, const std::vector<Volume<T>>& outputs) {
  require(outputs.size() == layout.tiles.size(), "stitch",
          "expected " + std::to_string(layout.tiles.size()) + " tile outputs, got " + std::to_string(outputs.size()));
  Stitcher<T> s(layout);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    require(!outputs[i].data.empty(), "stitch", "missing output for tile " + std::to_string(i));
    s.place(i, outputs[i]);
  }
  return s.finish();
}

}  // namespace dvnet
