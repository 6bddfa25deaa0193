#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/core/geometry.hpp"
#include "dvnet/io/volume.hpp"
#include "dvnet/ivote/cell_list.hpp"
#include "dvnet/net/config.hpp"
#include "dvnet/vessel/graph.hpp"

namespace dvnet {

/// Class ids of the three-class segmentation.
enum TissueClass : std::uint8_t { tissue = 0, cell = 1, vessel = 2 };

struct PhantomParams {
  std::array<std::int64_t, 3> extents{64, 64, 64};
  int cells = 8;
  double cell_radius_min = 3, cell_radius_max = 6;
  /// Independent vessel trees; each grows `branch_levels` rounds of bifurcation.
  int vessel_trees = 1;
  int branch_levels = 2;
  double vessel_radius_min = 2, vessel_radius_max = 3;
  double segment_length_min = 16, segment_length_max = 32;
  /// Minimum clearance between distinct structures, voxels.
  double gap = 2;
  /// Nuclei stain dark, neuropil light grey, vessels stay unstained.
  double background = 0.6, cell_intensity = 0.2, vessel_intensity = 0.9;
  double noise = 0.05;
  /// Amplitude of the smooth multiplicative illumination bias.
  double bias = 0.1;
  int max_attempts = 2000;

  void validate() const {
    const char* stage = "phantom";
    for (auto e : extents) require(e > 0, stage, "extents must be positive");
    require(cells >= 0 && vessel_trees >= 0 && branch_levels >= 0, stage, "counts must be non-negative");
    require(cell_radius_min > 0 && cell_radius_min <= cell_radius_max, stage, "need 0 < cell_radius_min <= max");
    require(vessel_radius_min > 0 && vessel_radius_min <= vessel_radius_max, stage,
            "need 0 < vessel_radius_min <= max");
    require(segment_length_min > 0 && segment_length_min <= segment_length_max, stage,
            "need 0 < segment_length_min <= max");
    const double smallest = static_cast<double>(*std::min_element(extents.begin(), extents.end()));
    require(cells == 0 || 2 * cell_radius_max + 2 < smallest, stage, "cell radius does not fit the volume");
    require(vessel_trees == 0 || 2 * vessel_radius_max + 2 < smallest, stage, "vessel radius does not fit the volume");
    require(noise >= 0 && bias >= 0 && bias < 1, stage, "need noise >= 0 and 0 <= bias < 1");
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "extents=" << extents[0] << ',' << extents[1] << ',' << extents[2] << '\n'
       << "cells=" << cells << "\ncell_radius_min=" << format_real(cell_radius_min)
       << "\ncell_radius_max=" << format_real(cell_radius_max) << "\nvessel_trees=" << vessel_trees
       << "\nbranch_levels=" << branch_levels << "\nvessel_radius_min=" << format_real(vessel_radius_min)
       << "\nvessel_radius_max=" << format_real(vessel_radius_max)
       << "\nsegment_length_min=" << format_real(segment_length_min)
       << "\nsegment_length_max=" << format_real(segment_length_max) << "\ngap=" << format_real(gap)
       << "\nbackground=" << format_real(background) << "\ncell_intensity=" << format_real(cell_intensity)
       << "\nvessel_intensity=" << format_real(vessel_intensity) << "\nnoise=" << format_real(noise)
       << "\nbias=" << format_real(bias) << "\nmax_attempts=" << max_attempts << '\n';
    return os.str();
  }

  static PhantomParams from_text(std::string_view text) {
    PhantomParams p;
    for (const auto& [key, value] : parse_key_values(text, "phantom")) {
      try {
        if (key == "extents") {
          std::istringstream ls(value);
          std::string item;
          std::size_t n = 0;
          while (std::getline(ls, item, ',') && n < 3) p.extents[n++] = std::stoll(item);
          require(n == 3, "phantom", "extents needs three values");
        } else if (key == "cells") p.cells = std::stoi(value);
        else if (key == "cell_radius_min") p.cell_radius_min = std::stod(value);
        else if (key == "cell_radius_max") p.cell_radius_max = std::stod(value);
        else if (key == "vessel_trees") p.vessel_trees = std::stoi(value);
        else if (key == "branch_levels") p.branch_levels = std::stoi(value);
        else if (key == "vessel_radius_min") p.vessel_radius_min = std::stod(value);
        else if (key == "vessel_radius_max") p.vessel_radius_max = std::stod(value);
        else if (key == "segment_length_min") p.segment_length_min = std::stod(value);
        else if (key == "segment_length_max") p.segment_length_max = std::stod(value);
        else if (key == "gap") p.gap = std::stod(value);
        else if (key == "background") p.background = std::stod(value);
        else if (key == "cell_intensity") p.cell_intensity = std::stod(value);
        else if (key == "vessel_intensity") p.vessel_intensity = std::stod(value);
        else if (key == "noise") p.noise = std::stod(value);
        else if (key == "bias") p.bias = std::stod(value);
        else if (key == "max_attempts") p.max_attempts = std::stoi(value);
        else throw Error("phantom", "unknown key '" + key + "'");
      } catch (const std::logic_error&) {
        throw Error("phantom", "bad value for '" + key + "': " + value);
      }
    }
    p.validate();
    return p;
  }
};

struct Phantom {
  Volume<float> image;
  LabelVolume labels;
  CellList cells;
  VesselGraph vessels;
  PhantomParams params;
  std::uint64_t seed = 0;
};

/// Straight tube piece used while generating and rasterizing vessels.
struct TubeSegment {
  Vec3 a, b;
  double radius;
};

/// Sets `value` on voxels whose center lies within `radius` of segment [a, b].
template <class T>
void rasterize_segment(Volume<T>& v, const Vec3& a, const Vec3& b, double radius, T value) {
  std::array<std::int64_t, 3> lo{}, hi{};
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a[k], b[k]) - radius)));
    hi[k] = std::min<std::int64_t>(v.extents[k] - 1, static_cast<std::int64_t>(std::ceil(std::max(a[k], b[k]) + radius)));
  }
  for (auto z = lo[2]; z <= hi[2]; ++z)
    for (auto y = lo[1]; y <= hi[1]; ++y)
      for (auto x = lo[0]; x <= hi[0]; ++x) {
        const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        if (segment_distance(p, a, b) <= radius) v.at(x, y, z) = value;
      }
}

/// Union of tubes of `radius` around the polyline, as a binary mask.
inline Volume<float> tube_mask(const std::array<std::int64_t, 3>& extents, const std::vector<Vec3>& polyline,
                               double radius) {
  Volume<float> v(extents[0], extents[1], extents[2], 0.0f);
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) rasterize_segment(v, polyline[i], polyline[i + 1], radius, 1.0f);
  if (polyline.size() == 1) rasterize_segment(v, polyline[0], polyline[0], radius, 1.0f);
  return v;
}

/// Polyline as a single-edge graph sampled at (at most) unit spacing.
inline Trace polyline_trace(const std::vector<Vec3>& polyline, double radius) {
  Trace t;
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
    const Vec3 d = polyline[i + 1] - polyline[i];
    const int steps = std::max(1, static_cast<int>(std::ceil(norm(d))));
    for (int s = i == 0 ? 0 : 1; s <= steps; ++s)
      t.push_back(polyline[i] + (static_cast<double>(s) / steps) * d, radius, normalized(d));
  }
  return t;
}

/// Binary indicator of one class.
inline Volume<float> class_mask(const LabelVolume& labels, std::uint8_t cls) {
  Volume<float> m(labels.nx(), labels.ny(), labels.nz());
  std::transform(labels.data.begin(), labels.data.end(), m.data.begin(),
                 [cls](std::uint8_t l) { return l == cls ? 1.0f : 0.0f; });
  return m;
}

/// Adds N(0, sigma) noise and clamps to [0, 1].
inline void add_noise(Volume<float>& v, double sigma, std::uint64_t seed) {
  if (sigma <= 0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& x : v.data) x = static_cast<float>(std::clamp(x + n(rng), 0.0, 1.0));
}

namespace detail {

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v{n(rng), n(rng), n(rng)};
    if (norm(v) > 1e-6) return normalized(v);
  }
}

/// Largest t in [0, 1] such that a + t (b - a) stays in [lo, hi] on every axis.
inline double clip_fraction(const Vec3& a, const Vec3& b, const Vec3& lo, const Vec3& hi) {
  double t = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double d = b[k] - a[k];
    if (d > 0 && b[k] > hi[k]) t = std::min(t, (hi[k] - a[k]) / d);
    if (d < 0 && b[k] < lo[k]) t = std::min(t, (lo[k] - a[k]) / d);
  }
  return std::max(0.0, t);
}

struct VesselBuilder {
  const PhantomParams& p;
  std::mt19937_64& rng;
  std::vector<TubeSegment> segments;
  VesselGraph graph;
  Vec3 lo, hi;

  /// Clearance between a candidate segment (ignoring its first `skip` voxels)
  /// and everything placed so far.
  bool clear(const TubeSegment& s, double skip) const {
    const double len = distance(s.a, s.b);
    for (double t = skip; t <= len + 1e-9; t += 0.5) {
      const Vec3 q = s.a + (len > 0 ? t / len : 0.0) * (s.b - s.a);
      for (const auto& o : segments)
        if (segment_distance(q, o.a, o.b) < s.radius + o.radius + p.gap) return false;
    }
    return true;
  }

  /// Grows a straight segment from vertex `from` along `dir`; recurses into
  /// two children while levels remain and the segment was not clipped.
  void grow(int from, const Vec3& dir, double radius, int level, bool root) {
    std::uniform_real_distribution<double> len(p.segment_length_min, p.segment_length_max);
    const Vec3 a = graph.vertices[static_cast<std::size_t>(from)].position;
    const double l = len(rng);
    const Vec3 b0 = a + l * dir;
    const double t = clip_fraction(a, b0, lo, hi);
    const Vec3 b = a + t * (b0 - a);
    if (t * l < std::max(4.0, 2 * radius)) return;
    TubeSegment seg{a, b, radius};
    const double skip = root ? 0.0 : 2.0 * (2 * p.vessel_radius_max + p.gap);
    if (!clear(seg, skip)) return;
    segments.push_back(seg);
    const int to = static_cast<int>(graph.vertices.size());
    graph.vertices.push_back({b, 0});
    graph.edges.push_back({from, to, polyline_trace({a, b}, radius)});
    if (level >= p.branch_levels || t < 1.0) return;
    const auto frame = perpendicular_frame(dir);
    std::uniform_real_distribution<double> angle(std::numbers::pi / 6, std::numbers::pi / 3);
    std::uniform_real_distribution<double> spin(0, 2 * std::numbers::pi);
    const Vec3 axis = rotate(frame[0], dir, spin(rng));
    std::uniform_real_distribution<double> rad(p.vessel_radius_min, p.vessel_radius_max);
    const Vec3 d1 = rotate(dir, axis, angle(rng));
    const Vec3 d2 = rotate(dir, axis, -angle(rng));
    const double r1 = rad(rng), r2 = rad(rng);
    grow(to, d1, r1, level + 1, false);
    grow(to, d2, r2, level + 1, false);
  }
};

}  // namespace detail

/// Synthetic stained-tissue volume with exact ground truth: dark spherical
/// nuclei and bright branching vessels on a grey background, plus Gaussian
/// noise and a smooth illumination bias.
inline Phantom gen_phantom(const PhantomParams& params, std::uint64_t seed) {
  params.validate();
  const char* stage = "phantom";
  std::mt19937_64 rng(seed);
  const auto& e = params.extents;
  Phantom ph;
  ph.params = params;
  ph.seed = seed;
  ph.labels = LabelVolume(e[0], e[1], e[2], tissue);

  detail::VesselBuilder vb{params, rng, {}, {}, {}, {}};
  const double vm = params.vessel_radius_max + 1;
  vb.lo = {vm, vm, vm};
  vb.hi = {static_cast<double>(e[0]) - 1 - vm, static_cast<double>(e[1]) - 1 - vm, static_cast<double>(e[2]) - 1 - vm};
  for (int t = 0; t < params.vessel_trees; ++t) {
    const std::size_t before = vb.segments.size();
    for (int attempt = 0; attempt < params.max_attempts && vb.segments.size() == before; ++attempt) {
      Vec3 start;
      for (int k = 0; k < 3; ++k) start[k] = std::uniform_real_distribution<double>(vb.lo[k], vb.hi[k])(rng);
      const Vec3 dir = detail::random_unit(rng);
      const double r = std::uniform_real_distribution<double>(params.vessel_radius_min, params.vessel_radius_max)(rng);
      const int root = static_cast<int>(vb.graph.vertices.size());
      vb.graph.vertices.push_back({start, 0});
      vb.grow(root, dir, r, 0, true);
      if (vb.segments.size() == before) vb.graph.vertices.pop_back();
    }
    require(vb.segments.size() > before, stage,
            "could not place vessel tree " + std::to_string(t + 1) + " of " + std::to_string(params.vessel_trees));
  }
  ph.vessels = simplify(vb.graph);
  for (const auto& s : vb.segments) rasterize_segment(ph.labels, s.a, s.b, s.radius, std::uint8_t{vessel});

  std::uniform_real_distribution<double> radius(params.cell_radius_min, params.cell_radius_max);
  for (int attempt = 0; attempt < params.max_attempts && static_cast<int>(ph.cells.size()) < params.cells; ++attempt) {
    const double r = radius(rng);
    Vec3 c;
    for (int k = 0; k < 3; ++k) c[k] = std::uniform_real_distribution<double>(r + 1, static_cast<double>(e[k]) - 2 - r)(rng);
    bool ok = true;
    for (const auto& o : ph.cells) ok &= distance(c, {o.x, o.y, o.z}) >= r + o.radius + params.gap;
    for (const auto& s : vb.segments) ok &= ok && segment_distance(c, s.a, s.b) >= r + s.radius + params.gap;
    if (ok) ph.cells.push_back({c[0], c[1], c[2], 1.0, r});
  }
  require(static_cast<int>(ph.cells.size()) == params.cells, stage,
          "placed only " + std::to_string(ph.cells.size()) + " of " + std::to_string(params.cells) +
              " cells after " + std::to_string(params.max_attempts) + " attempts");
  for (const auto& c : ph.cells) rasterize_segment(ph.labels, {c.x, c.y, c.z}, {c.x, c.y, c.z}, c.radius, std::uint8_t{cell});

  std::uniform_real_distribution<double> phase(0, 2 * std::numbers::pi);
  const double px = phase(rng), py = phase(rng), pz = phase(rng);
  ph.image = Volume<float>(e[0], e[1], e[2]);
  for (std::int64_t z = 0; z < e[2]; ++z)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t x = 0; x < e[0]; ++x) {
        const double field = 1 + params.bias * std::sin(std::numbers::pi * x / e[0] + px) *
                                     std::sin(std::numbers::pi * y / e[1] + py) *
                                     std::sin(std::numbers::pi * z / e[2] + pz);
        const auto l = ph.labels.at(x, y, z);
        const double base = l == cell ? params.cell_intensity : l == vessel ? params.vessel_intensity : params.background;
        ph.image.at(x, y, z) = static_cast<float>(base * field);
      }
  add_noise(ph.image, params.noise, seed ^ 0x5851f42d4c957f2dULL);
  return ph;
}

}  // namespace dvnet
