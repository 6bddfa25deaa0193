#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>

#include "dvnet/phantom/evaluate.hpp"
#include "dvnet/phantom/phantom.hpp"
#include "dvnet/vessel/tracer.hpp"
#include "fixtures.hpp"

using namespace dvnet;
using namespace dvnet::testing;

TEST(Seeds, EmptyMaskHasNone) {
  Volume<float> v(16, 16, 16, 0.0f);
  EXPECT_TRUE(generate_seeds(v, 0.5).empty());
  EXPECT_TRUE(build_graph(v).empty());
}

TEST(Seeds, StraightTubeSeedsOnAxis) {
  auto v = cylinder({60, 32, 32}, {10, 16, 16}, {50, 16, 16}, 3);
  auto seeds = generate_seeds(v, 0.5);
  ASSERT_FALSE(seeds.empty());
  for (const auto& s : seeds) {
    EXPECT_LE(std::hypot(s.position[1] - 16, s.position[2] - 16), 1.0);
    EXPECT_NEAR(s.radius, 3.0, 0.5);
  }
  EXPECT_NEAR(std::abs(seeds.front().direction[0]), 1.0, 1e-3);
}

TEST(Seeds, ParallelTubesFormTwoClusters) {
  auto v = cylinder({60, 40, 32}, {10, 10, 16}, {50, 10, 16}, 3);
  auto w = cylinder({60, 40, 32}, {10, 28, 16}, {50, 28, 16}, 3);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = std::max(v.data[i], w.data[i]);
  int near_a = 0, near_b = 0;
  for (const auto& s : generate_seeds(v, 0.5)) {
    const double da = std::abs(s.position[1] - 10), db = std::abs(s.position[1] - 28);
    EXPECT_TRUE(da <= 1 || db <= 1);
    near_a += da <= 1;
    near_b += db <= 1;
  }
  EXPECT_GT(near_a, 0);
  EXPECT_GT(near_b, 0);
}

TEST(Template, CenteredBeatsDisplaced) {
  auto v = cylinder({40, 32, 32}, {0, 16, 16}, {39, 16, 16}, 3);
  const double centered = template_response(v, {20, 16, 16}, {1, 0, 0}, 3, 1.5);
  EXPECT_GT(centered, template_response(v, {20, 18, 16}, {1, 0, 0}, 3, 1.5));
  EXPECT_GT(centered, template_response(v, {20, 16, 14}, {1, 0, 0}, 3, 1.5));
  EXPECT_GT(centered, template_response(v, {20, 16, 16}, normalized({1, 1, 0}), 3, 1.5));
}

TEST(Template, UniformAndOutsideGiveZero) {
  Volume<float> v(16, 16, 16, 0.8f);
  EXPECT_NEAR(template_response(v, {8, 8, 8}, {0, 0, 1}, 3), 0.0, 1e-12);
  EXPECT_EQ(template_response(v, {-50, -50, -50}, {0, 0, 1}, 3), 0.0);
}

TEST(Template, RotationAboutAxisInvariant) {
  const Vec3 d = normalized({1, 0.4, 0.2});
  auto v = cylinder({48, 40, 40}, Vec3{24, 20, 20} - 20.0 * d, Vec3{24, 20, 20} + 20.0 * d, 4);
  const double base = template_response(v, {24, 20, 20}, d, 4, 2);
  EXPECT_GT(base, 0.5);
  for (double roll : {0.2, 0.5, 0.9, 1.3})
    EXPECT_NEAR(template_response(v, {24, 20, 20}, d, 4, 2, 2.0, roll), base, 0.05 * base) << roll;
}

TEST(Trace, StraightTube) {
  const Vec3 a{10, 16.3, 15.6}, b{110, 16.3, 15.6};
  auto v = cylinder({120, 32, 32}, a, b, 3);
  const auto t0 = std::chrono::steady_clock::now();
  auto g = build_graph(v);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 120.0);
  ASSERT_EQ(g.vertices.size(), 2u);
  ASSERT_EQ(g.edges.size(), 1u);
  const auto& tr = g.edges[0].geometry;
  const Vec3 e0 = tr.points.front(), e1 = tr.points.back();
  EXPECT_LE(std::min(distance(e0, a) + distance(e1, b), distance(e0, b) + distance(e1, a)), 4.0);
  EXPECT_LE(std::min(distance(e0, a), distance(e0, b)), 2.0);
  EXPECT_LE(std::min(distance(e1, a), distance(e1, b)), 2.0);
  double se = 0, re = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    se += std::pow(std::hypot(tr.points[i][1] - 16.3, tr.points[i][2] - 15.6), 2);
    re += tr.radii[i] - 3.0;
  }
  EXPECT_LT(std::sqrt(se / tr.size()), 1.0);
  EXPECT_LT(std::abs(re / tr.size()), 0.5);
}

TEST(Trace, EmptySeedTerminatesImmediately) {
  Volume<float> v(16, 16, 16, 0.0f);
  auto tr = trace_fiber(v, {{8, 8, 8}, 2, {1, 0, 0}}, nullptr);
  EXPECT_LE(tr.trace.size(), 1u);
}

TEST(Trace, HelixCoverage) {
  // curvature radius (a^2 + c^2) / a = 20 for a = c = 10
  const auto h = helix(10, 10, 1.5, {30, 30, 8});
  auto v = tube_mask({60, 60, static_cast<std::int64_t>(h.back()[2]) + 12}, h, 3);
  auto g = build_graph(v);
  ASSERT_FALSE(g.edges.empty());
  EXPECT_EQ(g.edges.size(), 1u);
  EXPECT_GE(coverage(h, g, 2.0), 0.95) << "arclength " << arclength(h);
}

TEST(Graph, YJunctionTopology) {
  std::vector<std::vector<Vec3>> arms;
  auto v = y_junction({40, 32, 24}, arms);
  auto g = build_graph(v);
  EXPECT_EQ(g.vertices.size(), 4u);
  EXPECT_EQ(g.edges.size(), 3u);
  int branch = 0;
  for (const auto& vx : g.vertices) branch += vx.degree == 3;
  EXPECT_EQ(branch, 1);
}

TEST(Graph, PointsStayInsideDilatedMask) {
  std::vector<std::vector<Vec3>> arms;
  auto v = y_junction({40, 32, 24}, arms);
  auto g = build_graph(v);
  for (const auto& e : g.edges)
    for (const auto& p : e.geometry.points) {
      bool near = false;
      const auto x = std::lround(p[0]), y = std::lround(p[1]), z = std::lround(p[2]);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) near |= v.contains(x + dx, y + dy, z + dz) && v.at(x + dx, y + dy, z + dz) >= 0.5f;
      EXPECT_TRUE(near);
    }
}

TEST(Graph, RadiusChangeBoundedPerStep) {
  auto v = cylinder({80, 32, 32}, {10, 16, 16}, {70, 16, 16}, 3);
  auto g = build_graph(v);
  for (const auto& e : g.edges)
    for (std::size_t i = 1; i < e.geometry.size(); ++i) {
      const double ratio = e.geometry.radii[i] / e.geometry.radii[i - 1];
      EXPECT_GE(ratio, 0.8 - 1e-9);
      EXPECT_LE(ratio, 1.25 + 1e-9);
    }
}

TEST(Graph, TranslationInvariant) {
  std::vector<std::vector<Vec3>> arms;
  auto a = build_graph(y_junction({40, 32, 24}, arms));
  auto b = build_graph(y_junction({43, 30, 25}, arms));
  EXPECT_EQ(a.vertices.size(), b.vertices.size());
  EXPECT_EQ(a.edges.size(), b.edges.size());
  EXPECT_NEAR(summarize(a).total_length, summarize(b).total_length, 0.02 * summarize(a).total_length);
}

TEST(Graph, Deterministic) {
  std::vector<std::vector<Vec3>> arms;
  auto v = y_junction({40, 32, 24}, arms);
  execution().threads = 1;
  const auto a = graph_to_text(build_graph(v));
  execution().threads = 3;
  const auto b = graph_to_text(build_graph(v));
  execution().threads = 1;
  EXPECT_EQ(a, b);
}

TEST(Graph, TextRoundTripAndSummary) {
  VesselGraph g;
  g.vertices = {{{0, 0, 0}, 0}, {{4, 0, 0}, 0}, {{4, 3, 0}, 0}};
  g.edges.push_back({0, 1, polyline_trace({{0, 0, 0}, {4, 0, 0}}, 2.0)});
  g.edges.push_back({1, 2, polyline_trace({{4, 0, 0}, {4, 3, 0}}, 1.5)});
  g.recompute_degrees();
  auto h = graph_from_text(graph_to_text(g));
  EXPECT_EQ(graph_to_text(h), graph_to_text(g));
  auto s = simplify(g);
  EXPECT_EQ(s.vertices.size(), 2u);
  EXPECT_EQ(s.edges.size(), 1u);
  EXPECT_NEAR(summarize(s).total_length, 7.0, 1e-12);
  EXPECT_EQ(summarize(g).branch_points, 0u);
  EXPECT_NE(summary_json(summarize(g)).find("\"total_length\""), std::string::npos);
  EXPECT_THROW(graph_from_text("vessel_graph vertices 1 edges 1\nvertex 0 0 0 0\nedge 0 0 5 1\n0 0 0 1\n"), Error);
}
