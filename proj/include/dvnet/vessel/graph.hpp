#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvnet/core/error.hpp"
#include "dvnet/core/geometry.hpp"
#include "dvnet/net/config.hpp"

namespace dvnet {

/// Centerline polyline with a radius and unit direction per point.
struct Trace {
  std::vector<Vec3> points;
  std::vector<double> radii;
  std::vector<Vec3> directions;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void push_back(const Vec3& p, double r, const Vec3& d) {
    points.push_back(p);
    radii.push_back(r);
    directions.push_back(d);
  }

  double length() const {
    double l = 0;
    for (std::size_t i = 1; i < points.size(); ++i) l += distance(points[i - 1], points[i]);
    return l;
  }

  Trace reversed() const {
    Trace t{{points.rbegin(), points.rend()}, {radii.rbegin(), radii.rend()}, {}};
    for (auto it = directions.rbegin(); it != directions.rend(); ++it) t.directions.push_back(-1.0 * *it);
    return t;
  }

  /// Points [begin, end] inclusive.
  Trace slice(std::size_t begin, std::size_t end) const {
    Trace t;
    for (std::size_t i = begin; i <= end; ++i) t.push_back(points[i], radii[i], directions[i]);
    return t;
  }

  /// Appends `other`, dropping its first point when it coincides with our last.
  void extend(const Trace& other) {
    for (std::size_t i = 0; i < other.size(); ++i) {
      if (i == 0 && !empty() && distance(points.back(), other.points[0]) < 1e-9) continue;
      push_back(other.points[i], other.radii[i], other.directions[i]);
    }
  }
};

struct GraphVertex {
  Vec3 position{0, 0, 0};
  int degree = 0;
};

/// Edge between vertices a and b; geometry runs from a to b.
struct GraphEdge {
  int a = 0, b = 0;
  Trace geometry;
};

/// Vertices are endpoints and branch points; edges carry the centerline between them.
struct VesselGraph {
  std::vector<GraphVertex> vertices;
  std::vector<GraphEdge> edges;

  void recompute_degrees() {
    for (auto& v : vertices) v.degree = 0;
    for (const auto& e : edges) {
      ++vertices[static_cast<std::size_t>(e.a)].degree;
      ++vertices[static_cast<std::size_t>(e.b)].degree;
    }
  }

  bool empty() const { return vertices.empty() && edges.empty(); }
};

/// Absorbs degree-2 vertices into their edges and drops isolated vertices.
inline VesselGraph simplify(VesselGraph g) {
  g.recompute_degrees();
  bool merged = true;
  while (merged) {
    merged = false;
    for (std::size_t v = 0; v < g.vertices.size() && !merged; ++v) {
      if (g.vertices[v].degree != 2) continue;
      std::vector<std::size_t> inc;
      for (std::size_t e = 0; e < g.edges.size(); ++e)
        if (g.edges[e].a == static_cast<int>(v) || g.edges[e].b == static_cast<int>(v)) inc.push_back(e);
      if (inc.size() != 2) continue;  // a loop on itself
      auto e1 = g.edges[inc[0]], e2 = g.edges[inc[1]];
      // orient e1 to end at v and e2 to start at v
      if (e1.a == static_cast<int>(v)) e1 = {e1.b, e1.a, e1.geometry.reversed()};
      if (e2.b == static_cast<int>(v)) e2 = {e2.b, e2.a, e2.geometry.reversed()};
      GraphEdge joined{e1.a, e2.b, e1.geometry};
      joined.geometry.extend(e2.geometry);
      g.edges.erase(g.edges.begin() + static_cast<std::ptrdiff_t>(inc[1]));
      g.edges[inc[0]] = std::move(joined);
      g.vertices[v].degree = 0;
      merged = true;
    }
  }
  std::vector<int> remap(g.vertices.size(), -1);
  VesselGraph out;
  g.recompute_degrees();
  for (std::size_t v = 0; v < g.vertices.size(); ++v)
    if (g.vertices[v].degree > 0) {
      remap[v] = static_cast<int>(out.vertices.size());
      out.vertices.push_back(g.vertices[v]);
    }
  for (auto& e : g.edges) out.edges.push_back({remap[static_cast<std::size_t>(e.a)], remap[static_cast<std::size_t>(e.b)], std::move(e.geometry)});
  return out;
}

struct GraphSummary {
  std::size_t vertices = 0, edges = 0, branch_points = 0, endpoints = 0;
  double total_length = 0;
  double mean_radius = 0;
  /// Count of centerline points per unit-width radius bin [i, i + 1).
  std::vector<std::size_t> radius_histogram;
};

inline GraphSummary summarize(const VesselGraph& g) {
  GraphSummary s;
  s.vertices = g.vertices.size();
  s.edges = g.edges.size();
  for (const auto& v : g.vertices) {
    s.branch_points += v.degree >= 3;
    s.endpoints += v.degree == 1;
  }
  std::size_t n = 0;
  for (const auto& e : g.edges) {
    s.total_length += e.geometry.length();
    for (double r : e.geometry.radii) {
      const auto bin = static_cast<std::size_t>(std::max(0.0, r));
      if (s.radius_histogram.size() <= bin) s.radius_histogram.resize(bin + 1, 0);
      ++s.radius_histogram[bin];
      s.mean_radius += r;
      ++n;
    }
  }
  if (n) s.mean_radius /= static_cast<double>(n);
  return s;
}

inline std::string summary_json(const GraphSummary& s) {
  nlohmann::ordered_json j;
  j["vertices"] = s.vertices;
  j["edges"] = s.edges;
  j["branch_points"] = s.branch_points;
  j["endpoints"] = s.endpoints;
  j["total_length"] = s.total_length;
  j["mean_radius"] = s.mean_radius;
  j["radius_histogram"] = s.radius_histogram;
  return j.dump(2) + "\n";
}

/// Plain-text export: header, "vertex id x y z" lines, then per edge an
/// "edge id a b n" line followed by n "x y z r" lines.
inline std::string graph_to_text(const VesselGraph& g) {
  std::ostringstream os;
  os << "vessel_graph vertices " << g.vertices.size() << " edges " << g.edges.size() << '\n';
  for (std::size_t i = 0; i < g.vertices.size(); ++i) {
    const auto& p = g.vertices[i].position;
    os << "vertex " << i << ' ' << format_real(p[0]) << ' ' << format_real(p[1]) << ' ' << format_real(p[2]) << '\n';
  }
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto& e = g.edges[i];
    os << "edge " << i << ' ' << e.a << ' ' << e.b << ' ' << e.geometry.size() << '\n';
    for (std::size_t k = 0; k < e.geometry.size(); ++k) {
      const auto& p = e.geometry.points[k];
      os << format_real(p[0]) << ' ' << format_real(p[1]) << ' ' << format_real(p[2]) << ' '
         << format_real(e.geometry.radii[k]) << '\n';
    }
  }
  return os.str();
}

inline VesselGraph graph_from_text(std::string_view text) {
  const char* stage = "graph";
  std::istringstream in{std::string(text)};
  std::string word;
  std::size_t nv = 0, ne = 0;
  in >> word;
  require(word == "vessel_graph", stage, "missing vessel_graph header");
  in >> word >> nv >> word >> ne;
  require(static_cast<bool>(in), stage, "malformed header");
  VesselGraph g;
  for (std::size_t i = 0; i < nv; ++i) {
    std::size_t id = 0;
    Vec3 p{};
    in >> word >> id >> p[0] >> p[1] >> p[2];
    require(in && word == "vertex" && id == i, stage, "malformed vertex line " + std::to_string(i));
    g.vertices.push_back({p, 0});
  }
  for (std::size_t i = 0; i < ne; ++i) {
    std::size_t id = 0, n = 0;
    GraphEdge e;
    in >> word >> id >> e.a >> e.b >> n;
    require(in && word == "edge" && id == i, stage, "malformed edge line " + std::to_string(i));
    require(e.a >= 0 && e.b >= 0 && static_cast<std::size_t>(e.a) < nv && static_cast<std::size_t>(e.b) < nv, stage,
            "edge " + std::to_string(i) + " references a missing vertex");
    for (std::size_t k = 0; k < n; ++k) {
      Vec3 p{};
      double r = 0;
      in >> p[0] >> p[1] >> p[2] >> r;
      require(static_cast<bool>(in), stage, "edge " + std::to_string(i) + " is truncated");
      e.geometry.push_back(p, r, {0, 0, 0});
    }
    for (std::size_t k = 0; k < n; ++k) {
      const auto& pts = e.geometry.points;
      const Vec3 d = n < 2 ? Vec3{0, 0, 0} : pts[std::min(k + 1, n - 1)] - pts[k > 0 ? k - 1 : 0];
      e.geometry.directions[k] = normalized(d);
    }
    g.edges.push_back(std::move(e));
  }
  g.recompute_degrees();
  return g;
}

inline void save_graph(const VesselGraph& g, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "graph", "cannot write " + path);
  out << graph_to_text(g);
}

inline VesselGraph load_graph(const std::string& path) { return graph_from_text(read_text_file(path, "graph")); }

/// Points along every edge at (at most) `spacing` apart, endpoints included.
inline std::vector<Vec3> resample(const VesselGraph& g, double spacing = 1.0) {
  std::vector<Vec3> out;
  for (const auto& e : g.edges) {
    const auto& p = e.geometry.points;
    if (p.empty()) continue;
    out.push_back(p[0]);
    for (std::size_t i = 1; i < p.size(); ++i) {
      const double len = distance(p[i - 1], p[i]);
      const int steps = std::max(1, static_cast<int>(std::ceil(len / spacing)));
      for (int s = 1; s <= steps; ++s) out.push_back(p[i - 1] + (static_cast<double>(s) / steps) * (p[i] - p[i - 1]));
    }
  }
  return out;
}

}  // namespace dvnet
