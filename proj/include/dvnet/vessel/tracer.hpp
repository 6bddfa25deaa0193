#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dvnet/core/error.hpp"
#include "dvnet/core/filters.hpp"
#include "dvnet/core/geometry.hpp"
#include "dvnet/core/parallel.hpp"
#include "dvnet/io/volume.hpp"
#include "dvnet/vessel/graph.hpp"

namespace dvnet {

struct TracerParams {
  /// Mask level separating vessel from background.
  double threshold = 0.5;
  /// Step length is max(min_step, step_fraction * radius).
  double min_step = 1.0;
  double step_fraction = 0.5;
  /// Candidate directions: the axis plus rings of 8, 12 and 12 samples out to this half-angle.
  double cone_half_angle = 35.0 * std::numbers::pi / 180.0;
  std::vector<double> radius_factors{0.8, 0.9, 1.0, 1.1, 1.25};
  double min_radius = 1.0;
  double max_radius = 8.0;
  /// A trace stops when its best response drops below this fraction of the seed response.
  double termination_fraction = 0.2;
  /// Points at a faded end responding below this fraction of the trace's median response are trimmed.
  double end_trim_fraction = 0.6;
  /// Width of the exterior sampling band beside each template, voxels.
  double band = 2.0;
  /// Lateral offsets (in voxels, along both perpendicular axes) tried when re-centering each step.
  std::vector<double> centering{-1.0, -0.5, 0.0, 0.5, 1.0};
  /// Claimed tube radius is max(radius + 1, claim_scale * radius).
  double claim_scale = 1.5;
  /// Traces shorter than this many seed radii are discarded.
  double min_length_radii = 2.0;

  void validate() const {
    const char* stage = "tracer";
    require(threshold > 0 && threshold < 1, stage, "threshold must lie in (0, 1)");
    require(min_step > 0 && step_fraction > 0, stage, "step parameters must be positive");
    require(cone_half_angle > 0 && cone_half_angle < std::numbers::pi / 2, stage, "cone half-angle must lie in (0, pi/2)");
    require(!radius_factors.empty(), stage, "radius bracket must not be empty");
    require(min_radius > 0 && min_radius <= max_radius, stage, "need 0 < min_radius <= max_radius");
    require(termination_fraction > 0 && termination_fraction < 1, stage, "termination fraction must lie in (0, 1)");
    require(band > 0 && claim_scale >= 1, stage, "need band > 0 and claim_scale >= 1");
  }
};

struct Seed {
  Vec3 position;
  double radius;
  Vec3 direction;
};

namespace detail {

/// Principal axis of the above-threshold voxels in a cube around `c`.
inline Vec3 principal_axis(const Volume<float>& mask, double threshold, const Vec3& c, int half) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  std::vector<Eigen::Vector3d> pts;
  const auto cx = static_cast<std::int64_t>(c[0]), cy = static_cast<std::int64_t>(c[1]),
             cz = static_cast<std::int64_t>(c[2]);
  for (auto z = cz - half; z <= cz + half; ++z)
    for (auto y = cy - half; y <= cy + half; ++y)
      for (auto x = cx - half; x <= cx + half; ++x)
        if (mask.contains(x, y, z) && mask.at(x, y, z) >= threshold) pts.emplace_back(x, y, z);
  if (pts.size() < 2) return {1, 0, 0};
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  for (const auto& p : pts) scatter += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(scatter);
  const Eigen::Vector3d v = es.eigenvectors().col(2);
  return normalized(Vec3{v[0], v[1], v[2]});
}

}  // namespace detail

/// Local maxima of the distance transform of the thresholded mask, strongest
/// first (ties in voxel order). Radius is the distance value; direction is the
/// principal axis of the nearby mask.
inline std::vector<Seed> generate_seeds(const Volume<float>& mask, double threshold) {
  const auto dt = distance_transform(mask, threshold);
  std::vector<std::pair<float, std::int64_t>> maxima;
  for (std::int64_t z = 0; z < mask.nz(); ++z)
    for (std::int64_t y = 0; y < mask.ny(); ++y)
      for (std::int64_t x = 0; x < mask.nx(); ++x) {
        const float d = dt.at(x, y, z);
        if (mask.at(x, y, z) < threshold || d <= 0) continue;
        bool is_max = true;
        for (int dz = -1; dz <= 1 && is_max; ++dz)
          for (int dy = -1; dy <= 1 && is_max; ++dy)
            for (int dx = -1; dx <= 1 && is_max; ++dx)
              if (dt.contains(x + dx, y + dy, z + dz) && dt.at(x + dx, y + dy, z + dz) > d) is_max = false;
        if (is_max) maxima.emplace_back(d, dt.index(x, y, z));
      }
  std::sort(maxima.begin(), maxima.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<Seed> seeds;
  for (const auto& [d, i] : maxima) {
    const Vec3 p{static_cast<double>(i % mask.nx()), static_cast<double>((i / mask.nx()) % mask.ny()),
                 static_cast<double>(i / (mask.nx() * mask.ny()))};
    const double r = std::min<double>(d, 1e6);
    const int half = std::max(2, static_cast<int>(std::ceil(2 * r)));
    seeds.push_back({p, r, detail::principal_axis(mask, threshold, p, half)});
  }
  return seeds;
}

/// Two perpendicular rectangular templates sharing the axis `d`, each
/// 2 * radius wide and `length` long. Response is the mean mask inside the
/// rectangles minus the mean over bands just beyond their long edges.
/// Samples falling outside the volume are skipped. `roll` turns the template
/// pair about the axis.
inline double template_response(const Volume<float>& mask, const Vec3& p, const Vec3& d, double radius,
                                 double length = 1.0, double band = 2.0, double roll = 0.0) {
  auto frame = perpendicular_frame(d);
  if (roll != 0) frame = {rotate(frame[0], d, roll), rotate(frame[1], d, roll)};
  const int nt = std::max(2, static_cast<int>(std::lround(2 * radius)));
  const int na = std::max(1, static_cast<int>(std::lround(length)));
  const int nb = std::max(1, static_cast<int>(std::lround(band)));
  double in_sum = 0, out_sum = 0;
  int in_n = 0, out_n = 0;
  for (const auto& w : frame)
    for (int k = 0; k < na; ++k) {
      const Vec3 base = p + (-0.5 * length + (k + 0.5) * length / na) * d;
      for (int i = 0; i < nt; ++i) {
        const Vec3 q = base + (-radius + (i + 0.5) * 2 * radius / nt) * w;
        if (!inside(mask, q)) continue;
        in_sum += sample(mask, q);
        ++in_n;
      }
      for (int j = 0; j < nb; ++j)
        for (double side : {-1.0, 1.0}) {
          const Vec3 q = base + (side * (radius + (j + 0.5) * band / nb)) * w;
          if (!inside(mask, q)) continue;
          out_sum += sample(mask, q);
          ++out_n;
        }
    }
  if (in_n == 0) return 0.0;
  return in_sum / in_n - (out_n ? out_sum / out_n : 0.0);
}

/// How a trace ended.
struct TraceEnd {
  enum Kind { faded, boundary, junction, step_limit } kind = faded;
  /// For junctions: id of the trace whose claimed region was entered.
  int other = -1;
};

struct TraceResult {
  Trace trace;
  TraceEnd start, end;
  double seed_response = 0;
};

/// Voxels claimed by finished traces (-1 = unclaimed).
using VisitMap = Volume<std::int32_t>;

namespace detail {

struct Step {
  Vec3 position, direction;
  double radius, response;
};

inline std::vector<Vec3> candidate_directions(const Vec3& d, double half_angle) {
  const auto frame = perpendicular_frame(d);
  std::vector<Vec3> out{d};
  const int counts[3] = {8, 12, 12};
  for (int ring = 1; ring <= 3; ++ring) {
    const double a = half_angle * ring / 3.0;
    const int n = counts[ring - 1];
    for (int k = 0; k < n; ++k) {
      const double phi = 2 * std::numbers::pi * k / n;
      out.push_back(normalized(std::cos(a) * d + std::sin(a) * (std::cos(phi) * frame[0] + std::sin(phi) * frame[1])));
    }
  }
  return out;
}

/// Best (direction, radius) for a step of `step` from `p`, then lateral re-centering.
inline Step correct(const Volume<float>& mask, const Vec3& p, const Vec3& d, double r, double step,
                    const TracerParams& tp) {
  const auto dirs = candidate_directions(d, tp.cone_half_angle);
  const auto nf = tp.radius_factors.size();
  std::vector<double> resp(dirs.size() * nf);
  parallel_for(resp.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const Vec3& c = dirs[i / nf];
      const double rr = std::clamp(tp.radius_factors[i % nf] * r, tp.min_radius, tp.max_radius);
      resp[i] = template_response(mask, p + step * c, c, rr, step, tp.band);
    }
  });
  const auto best = static_cast<std::size_t>(std::max_element(resp.begin(), resp.end()) - resp.begin());
  Step s{p + step * dirs[best / nf], dirs[best / nf],
         std::clamp(tp.radius_factors[best % nf] * r, tp.min_radius, tp.max_radius), resp[best]};
  const auto frame = perpendicular_frame(s.direction);
  Vec3 best_pos = s.position;
  for (double a : tp.centering)
    for (double b : tp.centering) {
      if (a == 0 && b == 0) continue;
      const Vec3 q = s.position + a * frame[0] + b * frame[1];
      const double v = template_response(mask, q, s.direction, s.radius, step, tp.band);
      if (v > s.response) {
        s.response = v;
        best_pos = q;
      }
    }
  s.position = best_pos;
  return s;
}

inline std::int32_t claim_at(const VisitMap& visit, const Vec3& p) {
  const auto x = std::lround(p[0]), y = std::lround(p[1]), z = std::lround(p[2]);
  return visit.contains(x, y, z) ? visit.at(x, y, z) : -1;
}

struct Followed {
  Trace trace;
  std::vector<double> response;
  TraceEnd end;
};

/// Follows the fiber from `p` in direction `d` (not including `p`).
inline Followed follow(const Volume<float>& mask, const VisitMap* visit, Vec3 p, Vec3 d, double r, double stop_below,
                       const TracerParams& tp) {
  Followed f;
  const double diag = norm(Vec3{static_cast<double>(mask.nx()), static_cast<double>(mask.ny()), static_cast<double>(mask.nz())});
  const auto max_steps = static_cast<std::int64_t>(std::ceil(diag / tp.min_step)) * 4;
  for (std::int64_t k = 0; k < max_steps; ++k) {
    const double step = std::max(tp.min_step, tp.step_fraction * r);
    const auto s = correct(mask, p, d, r, step, tp);
    if (s.response < stop_below) {
      f.end = {TraceEnd::faded, -1};
      return f;
    }
    if (!inside(mask, s.position)) {
      f.end = {TraceEnd::boundary, -1};
      return f;
    }
    f.trace.push_back(s.position, s.radius, s.direction);
    f.response.push_back(s.response);
    if (visit) {
      if (const auto owner = claim_at(*visit, s.position); owner >= 0) {
        f.end = {TraceEnd::junction, owner};
        return f;
      }
    }
    p = s.position;
    d = s.direction;
    r = s.radius;
  }
  f.end = {TraceEnd::step_limit, -1};
  return f;
}

/// Drops trailing points of a faded end whose response is below `floor`;
/// they sit on the rounded-off end of the fiber and drift sideways.
inline void trim_faded(Followed& f, double floor) {
  if (f.end.kind != TraceEnd::faded) return;
  while (!f.response.empty() && f.response.back() < floor) {
    f.response.pop_back();
    f.trace = f.trace.size() > 1 ? f.trace.slice(0, f.trace.size() - 2) : Trace{};
  }
}

}  // namespace detail

/// Predictor-corrector trace through `seed` in both directions.
inline TraceResult trace_fiber(const Volume<float>& mask, const Seed& seed, const VisitMap* visit,
                               const TracerParams& tp = {}) {
  tp.validate();
  TraceResult out;
  const double r0 = std::clamp(seed.radius, tp.min_radius, tp.max_radius);
  const double step0 = std::max(tp.min_step, tp.step_fraction * r0);
  // Best orientation and radius at the seed itself.
  Seed s{seed.position, r0, seed.direction};
  double initial = -1;
  for (const auto& c : detail::candidate_directions(seed.direction, tp.cone_half_angle))
    for (double f : tp.radius_factors) {
      const double rr = std::clamp(f * r0, tp.min_radius, tp.max_radius);
      if (const double v = template_response(mask, seed.position, c, rr, step0, tp.band); v > initial) {
        initial = v;
        s.direction = c;
        s.radius = rr;
      }
    }
  out.seed_response = initial;
  if (!(initial > 0) || mask.at(std::lround(s.position[0]), std::lround(s.position[1]), std::lround(s.position[2])) < tp.threshold)
    return out;
  const double stop = tp.termination_fraction * initial;
  auto back = detail::follow(mask, visit, s.position, -1.0 * s.direction, s.radius, stop, tp);
  auto fwd = detail::follow(mask, visit, s.position, s.direction, s.radius, stop, tp);
  std::vector<double> all{initial};
  all.insert(all.end(), back.response.begin(), back.response.end());
  all.insert(all.end(), fwd.response.begin(), fwd.response.end());
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(all.size() / 2), all.end());
  const double floor = tp.end_trim_fraction * all[all.size() / 2];
  detail::trim_faded(back, floor);
  detail::trim_faded(fwd, floor);
  out.trace = back.trace.reversed();
  out.trace.push_back(s.position, s.radius, s.direction);
  out.trace.extend(fwd.trace);
  out.start = back.end;
  out.end = fwd.end;
  return out;
}

namespace detail {

/// Marks unclaimed voxels within the claim radius of each centerline piece.
inline void claim(VisitMap& visit, const Trace& t, std::int32_t id, const TracerParams& tp) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Vec3& a = t.points[i];
    const Vec3& b = t.points[i + 1 < t.size() ? i + 1 : i];
    const double r = std::max(t.radii[i] + 1, tp.claim_scale * t.radii[i]);
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a[k], b[k]) - r)));
      hi[k] = std::min<std::int64_t>(visit.extents[k] - 1, static_cast<std::int64_t>(std::ceil(std::max(a[k], b[k]) + r)));
    }
    for (auto z = lo[2]; z <= hi[2]; ++z)
      for (auto y = lo[1]; y <= hi[1]; ++y)
        for (auto x = lo[0]; x <= hi[0]; ++x) {
          auto& c = visit.at(x, y, z);
          if (c < 0 && segment_distance({static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)}, a, b) <= r)
            c = id;
        }
  }
}

struct GraphBuilder {
  VesselGraph graph;
  /// Edge indices currently holding geometry of each trace.
  std::vector<std::vector<std::size_t>> trace_edges;

  /// Vertex where a trace ending at `p` joins trace `other`: an existing
  /// vertex when one is close, otherwise a new branch vertex splitting the
  /// nearest edge at its nearest centerline point.
  int join(int other, const Vec3& p, double snap) {
    double best = std::numeric_limits<double>::max();
    std::size_t be = 0, bi = 0;
    for (auto e : trace_edges[static_cast<std::size_t>(other)]) {
      const auto& pts = graph.edges[e].geometry.points;
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (const double d = distance(pts[i], p); d < best) {
          best = d;
          be = e;
          bi = i;
        }
    }
    auto& edge = graph.edges[be];
    const auto& pts = edge.geometry.points;
    const Vec3 q = pts[bi];
    for (int v : {edge.a, edge.b})
      if (distance(graph.vertices[static_cast<std::size_t>(v)].position, q) <= snap) return v;
    const int j = static_cast<int>(graph.vertices.size());
    graph.vertices.push_back({q, 0});
    GraphEdge tail{j, edge.b, edge.geometry.slice(bi, pts.size() - 1)};
    edge.geometry = edge.geometry.slice(0, bi);
    edge.b = j;
    graph.edges.push_back(std::move(tail));
    trace_edges[static_cast<std::size_t>(other)].push_back(graph.edges.size() - 1);
    return j;
  }
};

}  // namespace detail

/// Traces every unclaimed seed in order and assembles the vessel graph.
/// Entering another trace's claimed region ends a trace at a branch vertex.
inline VesselGraph build_graph(const Volume<float>& mask, const TracerParams& tp = {}) {
  tp.validate();
  const auto seeds = generate_seeds(mask, tp.threshold);
  VisitMap visit(mask.nx(), mask.ny(), mask.nz(), -1);
  Volume<std::uint8_t> tried(mask.nx(), mask.ny(), mask.nz(), 0);
  detail::GraphBuilder gb;
  for (const auto& seed : seeds) {
    const auto x = std::lround(seed.position[0]), y = std::lround(seed.position[1]), z = std::lround(seed.position[2]);
    if (visit.at(x, y, z) >= 0 || tried.at(x, y, z)) continue;
    auto tr = trace_fiber(mask, seed, &visit, tp);
    auto& t = tr.trace;
    if (t.size() < 2 || t.length() < tp.min_length_radii * seed.radius) {
      const double r = std::max(1.0, seed.radius);
      for (const auto& p : t.empty() ? std::vector<Vec3>{seed.position} : t.points)
        for (auto zz = std::lround(p[2] - r); zz <= std::lround(p[2] + r); ++zz)
          for (auto yy = std::lround(p[1] - r); yy <= std::lround(p[1] + r); ++yy)
            for (auto xx = std::lround(p[0] - r); xx <= std::lround(p[0] + r); ++xx)
              if (tried.contains(xx, yy, zz) &&
                  distance({static_cast<double>(xx), static_cast<double>(yy), static_cast<double>(zz)}, p) <= r)
                tried.at(xx, yy, zz) = 1;
      continue;
    }
    const int id = static_cast<int>(gb.trace_edges.size());
    gb.trace_edges.emplace_back();
    auto end_vertex = [&](const TraceEnd& end, bool at_start) {
      const Vec3 p = at_start ? t.points.front() : t.points.back();
      const double r = at_start ? t.radii.front() : t.radii.back();
      if (end.kind == TraceEnd::junction) {
        const int v = gb.join(end.other, p, std::max(2.0, r));
        Trace cap;
        cap.push_back(gb.graph.vertices[static_cast<std::size_t>(v)].position, r,
                      at_start ? t.directions.front() : t.directions.back());
        if (at_start) {
          cap.extend(t);
          t = std::move(cap);
        } else {
          t.extend(cap);
        }
        return v;
      }
      gb.graph.vertices.push_back({p, 0});
      return static_cast<int>(gb.graph.vertices.size()) - 1;
    };
    const int a = end_vertex(tr.start, true);
    const int b = end_vertex(tr.end, false);
    detail::claim(visit, t, id, tp);
    if (a == b) continue;  // closed loop onto a single vertex
    gb.graph.edges.push_back({a, b, t});
    gb.trace_edges.back().push_back(gb.graph.edges.size() - 1);
  }
  return simplify(std::move(gb.graph));
}

}  // namespace dvnet
