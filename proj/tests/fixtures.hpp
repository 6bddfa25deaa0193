#pragma once

// Geometric fixtures shared by the unit tests and the acceptance run.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "dvnet/ivote/ivote.hpp"
#include "dvnet/phantom/phantom.hpp"
#include "dvnet/vessel/tracer.hpp"

namespace dvnet::testing {

inline Volume<float> sphere_mask(std::int64_t n, const Vec3& c, double r) {
  Volume<float> v(n, n, n, 0.0f);
  rasterize_segment(v, c, c, r, 1.0f);
  return v;
}

/// Cell-probability mask of non-overlapping spheres with additive noise.
inline Volume<float> spheres_mask(const PhantomParams& params, std::uint64_t seed, double noise, CellList& truth) {
  auto p = params;
  p.vessel_trees = 0;
  p.noise = 0;
  auto ph = gen_phantom(p, seed);
  truth = ph.cells;
  auto m = class_mask(ph.labels, cell);
  add_noise(m, noise, seed + 1);
  return m;
}

/// Flat-ended cylinder between a and b.
inline Volume<float> cylinder(const std::array<std::int64_t, 3>& ext, const Vec3& a, const Vec3& b, double r) {
  Volume<float> v(ext[0], ext[1], ext[2], 0.0f);
  const Vec3 axis = b - a;
  const double len = norm(axis);
  const Vec3 u = (1.0 / len) * axis;
  for (std::int64_t z = 0; z < ext[2]; ++z)
    for (std::int64_t y = 0; y < ext[1]; ++y)
      for (std::int64_t x = 0; x < ext[0]; ++x) {
        const Vec3 p = Vec3{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)} - a;
        const double t = dot(p, u);
        if (t >= 0 && t <= len && norm(p - t * u) <= r) v.at(x, y, z) = 1.0f;
      }
  return v;
}

inline std::vector<Vec3> helix(double a, double c, double turns, const Vec3& origin) {
  std::vector<Vec3> pts;
  const int n = static_cast<int>(turns * 200);
  for (int i = 0; i <= n; ++i) {
    const double t = 2 * std::numbers::pi * turns * i / n;
    pts.push_back(origin + Vec3{a * std::cos(t), a * std::sin(t), c * t});
  }
  return pts;
}

inline double arclength(const std::vector<Vec3>& p) {
  double l = 0;
  for (std::size_t i = 1; i < p.size(); ++i) l += distance(p[i - 1], p[i]);
  return l;
}

/// Fraction of the polyline's arclength within `tol` of some trace point.
inline double coverage(const std::vector<Vec3>& truth, const VesselGraph& g, double tol) {
  const auto pts = resample(g, 0.5);
  double covered = 0, total = 0;
  for (std::size_t i = 1; i < truth.size(); ++i) {
    const double l = distance(truth[i - 1], truth[i]);
    total += l;
    const Vec3 mid = 0.5 * (truth[i - 1] + truth[i]);
    for (const auto& p : pts)
      if (distance(p, mid) <= tol) {
        covered += l;
        break;
      }
  }
  return covered / total;
}

inline Volume<float> y_junction(const Vec3& j, std::vector<std::vector<Vec3>>& arms) {
  const double r = 3;
  arms = {{j, j + Vec3{-30, 0, 0}}, {j, j + 30.0 * normalized(Vec3{1, 1, 0.2})}, {j, j + 30.0 * normalized(Vec3{1, -1, -0.2})}};
  Volume<float> v(80, 64, 48, 0.0f);
  for (const auto& arm : arms) rasterize_segment(v, arm[0], arm[1], r, 1.0f);
  return v;
}

}  // namespace dvnet::testing
