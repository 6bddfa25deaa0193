#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/core/geometry.hpp"
#include "dvnet/ivote/cell_list.hpp"
#include "dvnet/net/config.hpp"
#include "dvnet/vessel/graph.hpp"

namespace dvnet {

struct PrPoint {
  double threshold, precision, recall;
};

struct MatchResult {
  std::size_t true_positives = 0, false_positives = 0, false_negatives = 0;
  double precision = 1, recall = 1, f_score = 0;
  std::vector<PrPoint> curve;
};

/// Precision and recall with 0/0 = 1; F with 0/0 = 0.
inline MatchResult match_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  MatchResult m;
  m.true_positives = tp;
  m.false_positives = fp;
  m.false_negatives = fn;
  m.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f_score = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

namespace detail {

/// Greedy one-to-one matching: pairs taken by ascending distance, ties broken
/// by index, pairs farther than `max_dist` never matched.
inline std::size_t greedy_matches(const CellList& pred, const CellList& truth, double max_dist) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double d = distance({pred[i].x, pred[i].y, pred[i].z}, {truth[j].x, truth[j].y, truth[j].z});
      if (d <= max_dist) pairs.emplace_back(d, i, j);
    }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> pu(pred.size(), false), tu(truth.size(), false);
  std::size_t matched = 0;
  for (const auto& [d, i, j] : pairs)
    if (!pu[i] && !tu[j]) {
      pu[i] = tu[j] = true;
      ++matched;
    }
  return matched;
}

}  // namespace detail

/// Cell localization score. The curve sweeps the confidence threshold over
/// every distinct predicted confidence, ascending.
inline MatchResult eval_cells(const CellList& pred, const CellList& truth, double match_dist) {
  require(match_dist > 0, "evaluate", "match distance must be positive");
  const auto tp = detail::greedy_matches(pred, truth, match_dist);
  auto result = match_counts(tp, pred.size() - tp, truth.size() - tp);
  std::vector<double> thresholds;
  for (const auto& c : pred) thresholds.push_back(c.confidence);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  for (double t : thresholds) {
    CellList kept;
    for (const auto& c : pred)
      if (c.confidence >= t) kept.push_back(c);
    const auto k = detail::greedy_matches(kept, truth, match_dist);
    const auto m = match_counts(k, kept.size() - k, truth.size() - k);
    result.curve.push_back({t, m.precision, m.recall});
  }
  return result;
}

/// Default cell matching distance: half the mean true radius.
inline double default_match_distance(const CellList& truth) {
  if (truth.empty()) return 1.0;
  double r = 0;
  for (const auto& c : truth) r += c.radius;
  return 0.5 * r / static_cast<double>(truth.size());
}

namespace detail {

/// Fraction of `a` with a point of `b` within `sigma` (uniform grid lookup).
inline std::size_t covered(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double sigma) {
  if (a.empty() || b.empty()) return 0;
  auto key = [sigma](const Vec3& p) {
    return std::array<long long, 3>{static_cast<long long>(std::floor(p[0] / sigma)),
                                    static_cast<long long>(std::floor(p[1] / sigma)),
                                    static_cast<long long>(std::floor(p[2] / sigma))};
  };
  std::vector<std::pair<std::array<long long, 3>, std::size_t>> cells;
  for (std::size_t i = 0; i < b.size(); ++i) cells.emplace_back(key(b[i]), i);
  std::sort(cells.begin(), cells.end());
  std::size_t count = 0;
  for (const auto& p : a) {
    const auto k = key(p);
    bool hit = false;
    for (long long dz = -1; dz <= 1 && !hit; ++dz)
      for (long long dy = -1; dy <= 1 && !hit; ++dy)
        for (long long dx = -1; dx <= 1 && !hit; ++dx) {
          const std::array<long long, 3> q{k[0] + dx, k[1] + dy, k[2] + dz};
          auto it = std::lower_bound(cells.begin(), cells.end(), std::make_pair(q, std::size_t{0}));
          for (; it != cells.end() && it->first == q && !hit; ++it) hit = distance(p, b[it->second]) <= sigma;
        }
    count += hit;
  }
  return count;
}

}  // namespace detail

/// Centerline overlap score: both graphs resampled at unit spacing; a point
/// matches when the other set has a point within `sigma`.
inline MatchResult eval_vessels(const VesselGraph& pred, const VesselGraph& truth, double sigma = 2.0) {
  require(sigma > 0, "evaluate", "sigma must be positive");
  const auto p = resample(pred), t = resample(truth);
  const auto pm = detail::covered(p, t, sigma), tm = detail::covered(t, p, sigma);
  MatchResult m;
  m.true_positives = tm;
  m.false_positives = p.size() - pm;
  m.false_negatives = t.size() - tm;
  m.precision = p.empty() ? 1.0 : static_cast<double>(pm) / static_cast<double>(p.size());
  m.recall = t.empty() ? 1.0 : static_cast<double>(tm) / static_cast<double>(t.size());
  m.f_score = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

inline std::string match_report_csv(const std::string& name, const MatchResult& m) {
  std::ostringstream os;
  os << "metric,tp,fp,fn,precision,recall,f_score\n"
     << name << ',' << m.true_positives << ',' << m.false_positives << ',' << m.false_negatives << ','
     << format_real(m.precision) << ',' << format_real(m.recall) << ',' << format_real(m.f_score) << '\n';
  if (!m.curve.empty()) {
    os << "threshold,precision,recall\n";
    for (const auto& c : m.curve)
      os << format_real(c.threshold) << ',' << format_real(c.precision) << ',' << format_real(c.recall) << '\n';
  }
  return os.str();
}

}  // namespace dvnet
