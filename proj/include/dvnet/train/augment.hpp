#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/tensor/tensor.hpp"

namespace dvnet {

/// Training example: image [channels, spatial...] with values in [0, 1] and
/// one class id per voxel, labels shaped like the image's spatial axes.
struct Sample {
  Tensor<float> image;
  Tensor<std::uint8_t> labels;
};

/// Signed axis permutation: output axis a reads input axis `axes[a]`,
/// mirrored when `flip[a]`. Covers the 90-degree rotations and mirror images.
struct Symmetry {
  std::vector<int> axes;
  std::vector<bool> flip;

  static Symmetry identity(int rank) {
    Symmetry s;
    s.axes.resize(static_cast<std::size_t>(rank));
    std::iota(s.axes.begin(), s.axes.end(), 0);
    s.flip.assign(static_cast<std::size_t>(rank), false);
    return s;
  }
};

/// Elements of the axis-aligned symmetry group that map `spatial` onto itself
/// (axes may only be exchanged when their extents agree).
inline std::vector<Symmetry> shape_preserving_symmetries(const Shape& spatial) {
  const int rank = static_cast<int>(spatial.size());
  std::vector<Symmetry> out;
  std::vector<int> perm(static_cast<std::size_t>(rank));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (int a = 0; a < rank; ++a) ok &= spatial[static_cast<std::size_t>(a)] == spatial[static_cast<std::size_t>(perm[a])];
    if (!ok) continue;
    for (int mask = 0; mask < (1 << rank); ++mask) {
      Symmetry s;
      s.axes = perm;
      for (int a = 0; a < rank; ++a) s.flip.push_back((mask >> a) & 1);
      out.push_back(s);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

namespace detail {

/// Copies the box [origin, origin + size) of each channel of `src`
/// ([channels, spatial...]) through symmetry `s`.
template <class T>
Tensor<T> crop_transform(const Tensor<T>& src, std::int64_t channels, const Shape& origin, const Shape& size,
                         const Symmetry& s) {
  const auto rank = size.size();
  const Shape src_spatial(src.shape().end() - static_cast<std::ptrdiff_t>(rank), src.shape().end());
  Shape out_spatial(rank);
  for (std::size_t a = 0; a < rank; ++a) out_spatial[a] = size[static_cast<std::size_t>(s.axes[a])];
  Shape out_shape = src.shape();
  std::copy(out_spatial.begin(), out_spatial.end(), out_shape.end() - static_cast<std::ptrdiff_t>(rank));
  Tensor<T> out(out_shape);
  std::vector<std::int64_t> src_stride(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) src_stride[a] = src_stride[a + 1] * src_spatial[a + 1];
  const auto src_vox = shape_numel(src_spatial), out_vox = shape_numel(out_spatial);
  std::vector<std::int64_t> pos(rank, 0);
  for (std::int64_t i = 0; i < out_vox; ++i) {
    std::int64_t rem = i, offset = 0;
    for (std::size_t a = rank; a-- > 0;) {
      pos[a] = rem % out_spatial[a];
      rem /= out_spatial[a];
    }
    for (std::size_t a = 0; a < rank; ++a) {
      const auto sa = static_cast<std::size_t>(s.axes[a]);
      const auto p = s.flip[a] ? out_spatial[a] - 1 - pos[a] : pos[a];
      offset += (origin[sa] + p) * src_stride[sa];
    }
    for (std::int64_t c = 0; c < channels; ++c) out[c * out_vox + i] = src[c * src_vox + offset];
  }
  return out;
}

}  // namespace detail

/// Applies a symmetry to a whole sample.
inline Sample apply_symmetry(const Sample& s, const Symmetry& g) {
  const Shape spatial = s.labels.shape();
  const Shape origin(spatial.size(), 0);
  return {detail::crop_transform(s.image, s.image.dim(0), origin, spatial, g),
          detail::crop_transform(s.labels, 1, origin, spatial, g)};
}

/// Random crop to `crop` followed by a random shape-preserving symmetry,
/// identical for image and labels.
inline Sample augment(const Sample& s, const Shape& crop, std::mt19937_64& rng, bool transform = true) {
  const Shape spatial = s.labels.shape();
  require(crop.size() == spatial.size(), "augment", "crop rank differs from sample rank");
  Shape origin(spatial.size());
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    require(crop[a] >= 1 && crop[a] <= spatial[a], "augment",
            "crop " + shape_str(crop) + " does not fit sample " + shape_str(spatial));
    origin[a] = std::uniform_int_distribution<std::int64_t>(0, spatial[a] - crop[a])(rng);
  }
  Symmetry g = Symmetry::identity(static_cast<int>(crop.size()));
  if (transform) {
    const auto group = shape_preserving_symmetries(crop);
    g = group[std::uniform_int_distribution<std::size_t>(0, group.size() - 1)(rng)];
  }
  return {detail::crop_transform(s.image, s.image.dim(0), origin, crop, g),
          detail::crop_transform(s.labels, 1, origin, crop, g)};
}

}  // namespace dvnet
