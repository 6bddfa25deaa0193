#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "dvnet/core/geometry.hpp"
#include "dvnet/core/parallel.hpp"
#include "dvnet/io/volume.hpp"

namespace dvnet {

namespace detail {

/// Applies fn(line_begin_index, stride, length) to every line of `v` along `axis`.
template <class T, class Fn>
void for_each_line(const Volume<T>& v, int axis, Fn&& fn) {
  const auto nx = v.nx(), ny = v.ny(), nz = v.nz();
  const std::int64_t stride = axis == 0 ? 1 : axis == 1 ? nx : nx * ny;
  const std::int64_t length = v.extents[static_cast<std::size_t>(axis)];
  const std::int64_t lines = v.size() / length;
  parallel_for(static_cast<std::size_t>(lines), [&](std::size_t b, std::size_t e) {
    for (std::size_t l = b; l < e; ++l) {
      const auto i = static_cast<std::int64_t>(l);
      std::int64_t start = 0;
      if (axis == 0) start = i * nx;
      else if (axis == 1) start = (i / nx) * nx * ny + i % nx;
      else start = i;
      fn(start, stride, length);
    }
  });
  (void)nz;
}

}  // namespace detail

/// Separable Gaussian blur with clamp-to-edge borders; sigma 0 copies.
inline Volume<float> gaussian_smooth(const Volume<float>& v, double sigma) {
  if (sigma <= 0) return v;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= total;
  Volume<float> a = v, b = v;
  for (int axis = 0; axis < 3; ++axis) {
    detail::for_each_line(a, axis, [&](std::int64_t start, std::int64_t stride, std::int64_t n) {
      for (std::int64_t i = 0; i < n; ++i) {
        double s = 0;
        for (int k = -radius; k <= radius; ++k) {
          const auto j = std::clamp<std::int64_t>(i + k, 0, n - 1);
          s += kernel[static_cast<std::size_t>(k + radius)] * a.data[static_cast<std::size_t>(start + j * stride)];
        }
        b.data[static_cast<std::size_t>(start + i * stride)] = static_cast<float>(s);
      }
    });
    std::swap(a, b);
  }
  return a;
}

/// Central-difference gradient (one-sided at the borders), per voxel.
inline std::vector<std::array<float, 3>> gradient(const Volume<float>& v) {
  std::vector<std::array<float, 3>> g(static_cast<std::size_t>(v.size()));
  for (int axis = 0; axis < 3; ++axis)
    detail::for_each_line(v, axis, [&](std::int64_t start, std::int64_t stride, std::int64_t n) {
      for (std::int64_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::int64_t>(0, i - 1), hi = std::min(n - 1, i + 1);
        const float d = hi > lo ? (v.data[static_cast<std::size_t>(start + hi * stride)] -
                                   v.data[static_cast<std::size_t>(start + lo * stride)]) /
                                      static_cast<float>(hi - lo)
                                : 0.0f;
        g[static_cast<std::size_t>(start + i * stride)][static_cast<std::size_t>(axis)] = d;
      }
    });
  return g;
}

/// Trilinear interpolation; coordinates outside the volume are clamped.
inline double sample(const Volume<float>& v, const Vec3& p) {
  double f[3];
  std::int64_t i0[3], i1[3];
  for (int k = 0; k < 3; ++k) {
    const double c = std::clamp(p[k], 0.0, static_cast<double>(v.extents[k] - 1));
    i0[k] = static_cast<std::int64_t>(std::floor(c));
    i1[k] = std::min(i0[k] + 1, v.extents[k] - 1);
    f[k] = c - static_cast<double>(i0[k]);
  }
  double s = 0;
  for (int corner = 0; corner < 8; ++corner) {
    const bool bx = corner & 1, by = corner & 2, bz = corner & 4;
    const double w = (bx ? f[0] : 1 - f[0]) * (by ? f[1] : 1 - f[1]) * (bz ? f[2] : 1 - f[2]);
    if (w != 0) s += w * v.at(bx ? i1[0] : i0[0], by ? i1[1] : i0[1], bz ? i1[2] : i0[2]);
  }
  return s;
}

inline bool inside(const Volume<float>& v, const Vec3& p) {
  for (int k = 0; k < 3; ++k)
    if (p[k] < 0 || p[k] > static_cast<double>(v.extents[k] - 1)) return false;
  return true;
}

/// Exact Euclidean distance from each voxel to the nearest voxel where
/// `foreground` is false (separable lower-envelope transform). Space outside
/// the volume does not count as background.
inline Volume<float> distance_transform(const Volume<float>& mask, double threshold) {
  const double inf = 1e20;
  Volume<double> d2(mask.nx(), mask.ny(), mask.nz());
  for (std::size_t i = 0; i < d2.data.size(); ++i) d2.data[i] = mask.data[i] >= threshold ? inf : 0.0;
  for (int axis = 0; axis < 3; ++axis)
    detail::for_each_line(d2, axis, [&](std::int64_t start, std::int64_t stride, std::int64_t n) {
      std::vector<double> f(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
      std::vector<std::int64_t> hull(static_cast<std::size_t>(n));
      std::vector<double> bound(static_cast<std::size_t>(n + 1));
      for (std::int64_t i = 0; i < n; ++i) f[static_cast<std::size_t>(i)] = d2.data[static_cast<std::size_t>(start + i * stride)];
      std::int64_t k = -1;
      for (std::int64_t q = 0; q < n; ++q) {
        const double fq = f[static_cast<std::size_t>(q)];
        if (fq >= inf) continue;
        double s = -inf;
        while (k >= 0) {
          const auto p = hull[static_cast<std::size_t>(k)];
          s = ((fq + static_cast<double>(q * q)) - (f[static_cast<std::size_t>(p)] + static_cast<double>(p * p))) /
              (2.0 * static_cast<double>(q - p));
          if (s > bound[static_cast<std::size_t>(k)]) break;
          --k;
        }
        ++k;
        hull[static_cast<std::size_t>(k)] = q;
        bound[static_cast<std::size_t>(k)] = k == 0 ? -inf : s;
        bound[static_cast<std::size_t>(k + 1)] = inf;
      }
      if (k < 0) {
        std::fill(out.begin(), out.end(), inf);
      } else {
        std::int64_t j = 0;
        for (std::int64_t q = 0; q < n; ++q) {
          while (bound[static_cast<std::size_t>(j + 1)] < static_cast<double>(q)) ++j;
          const auto p = hull[static_cast<std::size_t>(j)];
          out[static_cast<std::size_t>(q)] = static_cast<double>((q - p) * (q - p)) + f[static_cast<std::size_t>(p)];
        }
      }
      for (std::int64_t i = 0; i < n; ++i) d2.data[static_cast<std::size_t>(start + i * stride)] = out[static_cast<std::size_t>(i)];
    });
  Volume<float> out(mask.nx(), mask.ny(), mask.nz());
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = d2.data[i] >= inf ? std::numeric_limits<float>::max() : static_cast<float>(std::sqrt(d2.data[i]));
  return out;
}

}  // namespace dvnet
