#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "dvnet/net/config.hpp"

namespace dvnet {

struct PlanRow {
  std::string stage;
  int depth = 0;
  /// Feature dimension is X / divisor.
  std::int64_t divisor = 1;

  friend bool operator==(const PlanRow&, const PlanRow&) = default;
};

/// Feature depth and spatial scale of every stage, input conv through output conv.
struct LayerPlan {
  std::vector<PlanRow> rows;

  std::vector<int> depths() const {
    std::vector<int> d;
    for (const auto& r : rows) d.push_back(r.depth);
    return d;
  }
  std::vector<std::int64_t> divisors() const {
    std::vector<std::int64_t> d;
    for (const auto& r : rows) d.push_back(r.divisor);
    return d;
  }
};

inline LayerPlan plan_architecture(const NetworkConfig& config) {
  config.validate();
  const int k = config.growth_rate;
  LayerPlan plan;
  auto checked = [](int depth, const std::string& stage) {
    require(depth >= 1, "plan", stage + " compresses to zero feature maps; raise theta or the depth");
    return depth;
  };

  int depth = config.input_features;
  std::int64_t divisor = 1;
  plan.rows.push_back({"input conv", depth, divisor});

  std::vector<int> skips;
  for (std::size_t i = 0; i < config.levels.size(); ++i) {
    const std::string db = "DB(" + std::to_string(config.levels[i]) + " BBs)";
    if (i > 0) {
      depth = checked(compress_depth(config.theta_down, depth), "TD");
      divisor *= 2;
    }
    depth += config.levels[i] * k;
    skips.push_back(depth);
    plan.rows.push_back({i > 0 ? "TD + " + db : db, depth, divisor});
  }
  depth = checked(compress_depth(config.theta_down, depth), "TD");
  divisor *= 2;
  depth += config.lu_layers * k;
  plan.rows.push_back({"TD + LU(" + std::to_string(config.lu_layers) + " BBs)", depth, divisor});

  for (std::size_t i = config.levels.size(); i-- > 0;) {
    depth = checked(compress_depth(config.theta_up, depth), "TU") + skips[i];
    divisor /= 2;
    depth += config.levels[i] * k;
    plan.rows.push_back({"TU + DB(" + std::to_string(config.levels[i]) + " BBs)", depth, divisor});
  }
  plan.rows.push_back({"output conv", config.num_classes, divisor});
  return plan;
}

inline void print_plan(std::ostream& os, const LayerPlan& plan) {
  os << std::left << std::setw(20) << "layer name" << std::setw(16) << "feature depth" << "feature dimension\n";
  for (const auto& r : plan.rows)
    os << std::setw(20) << r.stage << std::setw(16) << r.depth << (r.divisor == 1 ? std::string("X")
                                                                                   : "X/" + std::to_string(r.divisor))
       << '\n';
}

}  // namespace dvnet
