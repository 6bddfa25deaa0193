#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/tensor/tensor.hpp"

namespace dvnet {

/// Dense 3-d scalar field. Extents are (x, y, z); x varies fastest in memory,
/// so the matching tensor layout is [z, y, x].
template <class T>
struct Volume {
  std::array<std::int64_t, 3> extents{0, 0, 0};
  /// Micrometres per voxel along x, y, z.
  std::array<double, 3> voxel_size{1.0, 1.0, 1.0};
  std::vector<T> data;

  Volume() = default;
  Volume(std::int64_t nx, std::int64_t ny, std::int64_t nz, T fill = T{}) : extents{nx, ny, nz} {
    require(nx > 0 && ny > 0 && nz > 0, "volume", "extents must be positive");
    data.assign(static_cast<std::size_t>(nx * ny * nz), fill);
  }

  std::int64_t nx() const { return extents[0]; }
  std::int64_t ny() const { return extents[1]; }
  std::int64_t nz() const { return extents[2]; }
  std::int64_t size() const { return extents[0] * extents[1] * extents[2]; }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (z * extents[1] + y) * extents[0] + x;
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < extents[0] && y < extents[1] && z < extents[2];
  }
  T& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data[static_cast<std::size_t>(index(x, y, z))]; }
  const T& at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data[static_cast<std::size_t>(index(x, y, z))];
  }

  friend bool operator==(const Volume&, const Volume&) = default;
};

using LabelVolume = Volume<std::uint8_t>;

/// Volume as a [1, 1, z, y, x] tensor.
template <class T, class U>
Tensor<T> to_tensor(const Volume<U>& v) {
  Tensor<T> t(Shape{1, 1, v.nz(), v.ny(), v.nx()});
  for (std::int64_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v.data[static_cast<std::size_t>(i)]);
  return t;
}

/// One channel of a [1, C, z, y, x] tensor as a volume.
template <class U, class T>
Volume<U> channel_volume(const Tensor<T>& t, std::int64_t channel) {
  require(t.rank() == 5 && t.batch() == 1, "volume", "expected a [1, C, z, y, x] tensor, got " + shape_str(t.shape()));
  Volume<U> v(t.dim(4), t.dim(3), t.dim(2));
  const T* src = t.data() + channel * v.size();
  for (std::int64_t i = 0; i < v.size(); ++i) v.data[static_cast<std::size_t>(i)] = static_cast<U>(src[i]);
  return v;
}

/// Argmax over channels of a [1, C, z, y, x] probability tensor.
template <class T>
LabelVolume argmax_volume(const Tensor<T>& probs) {
  require(probs.rank() == 5 && probs.batch() == 1, "volume", "expected a [1, C, z, y, x] tensor");
  LabelVolume out(probs.dim(4), probs.dim(3), probs.dim(2));
  const auto c = probs.channels(), v = out.size();
  for (std::int64_t i = 0; i < v; ++i) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < c; ++k)
      if (probs[k * v + i] > probs[best * v + i]) best = k;
    out.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace dvnet
