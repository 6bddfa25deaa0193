#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/core/filters.hpp"
#include "dvnet/core/parallel.hpp"
#include "dvnet/io/volume.hpp"
#include "dvnet/ivote/cell_list.hpp"

namespace dvnet {

struct IVoteParams {
  /// Gaussian pre-smoothing of the mask, voxels.
  double sigma = 1.0;
  double start_angle = std::numbers::pi / 4;
  /// Cone half-angle multiplier per refinement.
  double narrowing = 0.5;
  int max_iterations = 8;
  /// Stop when the accumulator's relative L1 change falls below this.
  double tolerance = 1e-3;
  /// Detections need at least this fraction of the global accumulator maximum.
  double threshold_fraction = 0.1;
  /// Non-maximum suppression distance; 0 means rmax / 2.
  double min_separation = 0;
  /// Voxels whose gradient magnitude is below this fraction of the maximum do not vote.
  double min_magnitude_fraction = 0.05;
  /// Detections whose center samples the mask below this are dropped.
  double center_threshold = 0.5;

  void validate() const {
    const char* stage = "ivote";
    require(sigma >= 0, stage, "sigma must be >= 0");
    require(start_angle > 0 && start_angle <= std::numbers::pi / 2, stage, "start angle must lie in (0, pi/2]");
    require(narrowing > 0 && narrowing < 1, stage, "narrowing factor must lie in (0, 1)");
    require(max_iterations >= 1, stage, "max_iterations must be >= 1");
    require(threshold_fraction > 0 && threshold_fraction <= 1, stage, "threshold fraction must lie in (0, 1]");
    require(min_magnitude_fraction >= 0 && min_magnitude_fraction < 1, stage, "min magnitude fraction must lie in [0, 1)");
  }
};

/// Per-voxel voting state. Directions point from a voter up the gradient,
/// toward the bright interior of a cell.
struct VoteField {
  std::array<std::int64_t, 3> extents{0, 0, 0};
  std::vector<float> magnitude;
  std::vector<std::array<float, 3>> direction;
  std::vector<float> half_angle;
  /// Indices of voxels with nonzero magnitude, ascending.
  std::vector<std::int64_t> voters;
};

inline VoteField compute_gradient(const Volume<float>& volume, double sigma, double start_angle = std::numbers::pi / 4,
                                  double min_magnitude_fraction = 0.0) {
  require(sigma >= 0, "ivote", "sigma must be >= 0");
  const auto g = gradient(gaussian_smooth(volume, sigma));
  VoteField f;
  f.extents = volume.extents;
  const auto n = g.size();
  f.magnitude.resize(n);
  f.direction.assign(n, {0, 0, 0});
  f.half_angle.assign(n, static_cast<float>(start_angle));
  float peak = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = g[i];
    f.magnitude[i] = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    peak = std::max(peak, f.magnitude[i]);
  }
  const float floor = static_cast<float>(min_magnitude_fraction) * peak;
  for (std::size_t i = 0; i < n; ++i) {
    const float m = f.magnitude[i];
    if (m <= 0 || m < floor) {
      f.magnitude[i] = 0;
      continue;
    }
    f.direction[i] = {g[i][0] / m, g[i][1] / m, g[i][2] / m};
    f.voters.push_back(static_cast<std::int64_t>(i));
  }
  return f;
}

namespace detail {

struct ConeOffset {
  int dx, dy, dz;
  float ux, uy, uz;
};

/// Lattice offsets with 0 < |o| <= rmax, sorted by dz then dy then dx.
inline std::vector<ConeOffset> ball_offsets(int rmax) {
  std::vector<ConeOffset> out;
  for (int dz = -rmax; dz <= rmax; ++dz)
    for (int dy = -rmax; dy <= rmax; ++dy)
      for (int dx = -rmax; dx <= rmax; ++dx) {
        const int r2 = dx * dx + dy * dy + dz * dz;
        if (r2 == 0 || r2 > rmax * rmax) continue;
        const float l = std::sqrt(static_cast<float>(r2));
        out.push_back({dx, dy, dz, dx / l, dy / l, dz / l});
      }
  return out;
}

/// Visits the in-bounds cone voxels of voter `v`: fn(voxel_index, offset).
/// Only offsets with dz in [dz_lo, dz_hi] are considered.
template <class Fn>
void for_each_cone_voxel(const VoteField& f, const std::vector<ConeOffset>& offsets, std::int64_t v, int dz_lo,
                         int dz_hi, Fn&& fn) {
  const auto nx = f.extents[0], ny = f.extents[1], nz = f.extents[2];
  const std::int64_t x = v % nx, y = (v / nx) % ny, z = v / (nx * ny);
  const auto& d = f.direction[static_cast<std::size_t>(v)];
  // A small slack keeps lattice points exactly on the cone axis inside it.
  const float cos_a = std::cos(f.half_angle[static_cast<std::size_t>(v)]) - 1e-6f;
  for (const auto& o : offsets) {
    if (o.dz < dz_lo) continue;
    if (o.dz > dz_hi) break;
    if (o.ux * d[0] + o.uy * d[1] + o.uz * d[2] < cos_a) continue;
    const auto px = x + o.dx, py = y + o.dy, pz = z + o.dz;
    if (px < 0 || py < 0 || pz < 0 || px >= nx || py >= ny || pz >= nz) continue;
    fn((pz * ny + py) * nx + px, o);
  }
}

}  // namespace detail

/// One voting pass. Each voter adds its magnitude to every voxel of its cone
/// (apex at the voter, length rmax). Work is split into z-slabs of the
/// accumulator, and every voxel sums its votes in voter order, so the result
/// does not depend on the thread count.
inline Volume<float> vote_pass(const VoteField& field, int rmax) {
  require(rmax >= 1, "ivote", "rmax must be >= 1");
  const auto offsets = detail::ball_offsets(rmax);
  Volume<float> acc(field.extents[0], field.extents[1], field.extents[2], 0.0f);
  const auto nz = field.extents[2], plane = field.extents[0] * field.extents[1];
  parallel_for(static_cast<std::size_t>(nz), [&](std::size_t zb, std::size_t ze) {
    const auto z0 = static_cast<std::int64_t>(zb), z1 = static_cast<std::int64_t>(ze);
    auto first = std::lower_bound(field.voters.begin(), field.voters.end(), std::max<std::int64_t>(0, z0 - rmax) * plane);
    auto last = std::lower_bound(field.voters.begin(), field.voters.end(), (z1 + rmax) * plane);
    for (auto it = first; it != last; ++it) {
      const auto v = *it;
      const auto vz = v / plane;
      const float m = field.magnitude[static_cast<std::size_t>(v)];
      detail::for_each_cone_voxel(field, offsets, v, static_cast<int>(z0 - vz), static_cast<int>(z1 - 1 - vz),
                                  [&](std::int64_t i, const detail::ConeOffset&) { acc.data[static_cast<std::size_t>(i)] += m; });
    }
  });
  return acc;
}

/// Turns each voter toward the accumulator maximum inside its current cone
/// (first in offset order on ties) and narrows every cone.
inline VoteField refine(VoteField field, const Volume<float>& acc, int rmax, double narrowing = 0.5) {
  const auto offsets = detail::ball_offsets(rmax);
  parallel_for(field.voters.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      const auto v = field.voters[k];
      float best = -1;
      const detail::ConeOffset* arg = nullptr;
      detail::for_each_cone_voxel(field, offsets, v, -rmax, rmax, [&](std::int64_t i, const detail::ConeOffset& o) {
        if (acc.data[static_cast<std::size_t>(i)] > best) {
          best = acc.data[static_cast<std::size_t>(i)];
          arg = &o;
        }
      });
      if (arg) field.direction[static_cast<std::size_t>(v)] = {arg->ux, arg->uy, arg->uz};
    }
  });
  for (auto& a : field.half_angle) a = static_cast<float>(a * narrowing);
  return field;
}

struct VoteResult {
  Volume<float> accumulator;
  VoteField field;
  int passes = 0;
};

/// Vote and refine until the accumulator settles or the pass budget runs out.
inline VoteResult iterative_vote(const Volume<float>& mask, int rmax, const IVoteParams& p = {}) {
  require(rmax >= 1, "ivote", "rmax must be >= 1");
  p.validate();
  VoteResult r;
  r.field = compute_gradient(mask, p.sigma, p.start_angle, p.min_magnitude_fraction);
  for (int it = 0; it < p.max_iterations; ++it) {
    auto acc = vote_pass(r.field, rmax);
    ++r.passes;
    double diff = 0, total = 0;
    if (it > 0) {
      for (std::size_t i = 0; i < acc.data.size(); ++i) {
        diff += std::abs(static_cast<double>(acc.data[i]) - r.accumulator.data[i]);
        total += std::abs(static_cast<double>(acc.data[i]));
      }
    }
    r.accumulator = std::move(acc);
    if (it > 0 && (total == 0 || diff / total < p.tolerance)) break;
    if (it + 1 < p.max_iterations) r.field = refine(std::move(r.field), r.accumulator, rmax, p.narrowing);
  }
  return r;
}

/// Radius at which the spherical shell average of `mask` around `c` drops
/// below 0.5, interpolated between unit-width shells.
inline double spherical_radius(const Volume<float>& mask, const Vec3& c, int max_radius) {
  const int reach = max_radius + 1;
  std::vector<double> sum(static_cast<std::size_t>(reach + 1), 0.0), count(sum.size(), 0.0);
  const auto cx = static_cast<std::int64_t>(std::lround(c[0])), cy = static_cast<std::int64_t>(std::lround(c[1])),
             cz = static_cast<std::int64_t>(std::lround(c[2]));
  for (auto z = cz - reach - 1; z <= cz + reach + 1; ++z)
    for (auto y = cy - reach - 1; y <= cy + reach + 1; ++y)
      for (auto x = cx - reach - 1; x <= cx + reach + 1; ++x) {
        if (!mask.contains(x, y, z)) continue;
        const double d = distance({static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)}, c);
        const auto shell = static_cast<std::int64_t>(std::floor(d + 0.5));
        if (shell < 1 || shell > reach) continue;
        sum[static_cast<std::size_t>(shell)] += mask.at(x, y, z);
        count[static_cast<std::size_t>(shell)] += 1;
      }
  double prev = sample(mask, c);
  if (prev < 0.5) return 0.0;
  for (int r = 1; r <= reach; ++r) {
    if (count[static_cast<std::size_t>(r)] == 0) return r - 1;
    const double avg = sum[static_cast<std::size_t>(r)] / count[static_cast<std::size_t>(r)];
    if (avg < 0.5) return (r - 1) + (prev - 0.5) / (prev - avg);
    prev = avg;
  }
  return reach;
}

/// Local maxima of the accumulator above the threshold, strongest first,
/// suppressed within `min_separation` of a stronger detection. Centers are the
/// accumulator-weighted centroid of the 3x3x3 neighbourhood.
inline CellList extract_centers(const Volume<float>& acc, const Volume<float>& mask, int rmax, double threshold,
                                double min_separation) {
  struct Peak {
    float value;
    std::int64_t index;
  };
  std::vector<Peak> peaks;
  const auto nx = acc.nx(), ny = acc.ny(), nz = acc.nz();
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        const float v = acc.at(x, y, z);
        if (v <= 0 || v < threshold) continue;
        bool is_max = true;
        for (int dz = -1; dz <= 1 && is_max; ++dz)
          for (int dy = -1; dy <= 1 && is_max; ++dy)
            for (int dx = -1; dx <= 1 && is_max; ++dx)
              if (acc.contains(x + dx, y + dy, z + dz) && acc.at(x + dx, y + dy, z + dz) > v) is_max = false;
        if (is_max) peaks.push_back({v, acc.index(x, y, z)});
      }
  std::sort(peaks.begin(), peaks.end(),
            [](const Peak& a, const Peak& b) { return a.value != b.value ? a.value > b.value : a.index < b.index; });
  CellList out;
  for (const auto& p : peaks) {
    const std::int64_t x = p.index % nx, y = (p.index / nx) % ny, z = p.index / (nx * ny);
    double w = 0;
    Vec3 c{0, 0, 0};
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!acc.contains(x + dx, y + dy, z + dz)) continue;
          const double a = acc.at(x + dx, y + dy, z + dz);
          w += a;
          c = c + a * Vec3{static_cast<double>(x + dx), static_cast<double>(y + dy), static_cast<double>(z + dz)};
        }
    c = (1.0 / w) * c;
    bool far = true;
    for (const auto& q : out) far &= distance(c, {q.x, q.y, q.z}) >= min_separation;
    if (!far) continue;
    out.push_back({c[0], c[1], c[2], p.value, spherical_radius(mask, c, rmax)});
  }
  return out;
}

/// Cell centers from a cell-probability mask in [0, 1].
inline CellList detect_cells(const Volume<float>& mask, int rmax, const IVoteParams& p = {}) {
  require(rmax >= 1, "ivote", "rmax must be >= 1");
  const auto r = iterative_vote(mask, rmax, p);
  const float peak = r.accumulator.data.empty() ? 0.0f : *std::max_element(r.accumulator.data.begin(), r.accumulator.data.end());
  if (peak <= 0) return {};
  const double sep = p.min_separation > 0 ? p.min_separation : rmax / 2.0;
  auto cells = extract_centers(r.accumulator, mask, rmax, p.threshold_fraction * peak, sep);
  std::erase_if(cells, [&](const Cell& c) { return sample(mask, {c.x, c.y, c.z}) < p.center_threshold; });
  return cells;
}

}  // namespace dvnet
