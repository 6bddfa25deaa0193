#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dvnet/core/error.hpp"

namespace dvnet {

/// Parses "key=value" lines; '#' starts a comment. Shared by every
/// plain-text parameter file in the project.
inline std::map<std::string, std::string> parse_key_values(std::string_view text, const char* stage) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, stage, "line " + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline std::string read_text_file(const std::string& path, const char* stage) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), stage, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Architecture hyper-parameters of a DVNet.
struct NetworkConfig {
  int spatial_rank = 3;
  /// Bottleneck-block count of each feature-extraction level, shallow first.
  std::vector<int> levels{4, 6, 8, 10, 12};
  int lu_layers = 16;
  int growth_rate = 16;
  double theta_down = 0.5;
  double theta_up = 0.3;
  int input_features = 64;
  int num_classes = 3;
  double dropout_rate = 0.1;
  int input_channels = 1;

  /// Spatial extents fed to the network must be multiples of this.
  std::int64_t required_divisor() const { return std::int64_t{1} << levels.size(); }

  void validate() const {
    const char* stage = "config";
    require(spatial_rank == 2 || spatial_rank == 3, stage, "spatial_rank must be 2 or 3");
    require(!levels.empty(), stage, "levels must list at least one feature-extraction level");
    for (int l : levels) require(l >= 1, stage, "every level needs at least one bottleneck block");
    require(lu_layers >= 1, stage, "lu_layers must be >= 1");
    require(growth_rate >= 1, stage, "growth_rate k must be >= 1");
    require(theta_down > 0 && theta_down <= 1, stage, "theta_down must lie in (0, 1]");
    require(theta_up > 0 && theta_up <= 1, stage, "theta_up must lie in (0, 1]");
    require(input_features >= 1, stage, "input_features must be >= 1");
    require(num_classes >= 2, stage, "num_classes must be >= 2");
    require(dropout_rate >= 0 && dropout_rate < 1, stage, "dropout_rate must lie in [0, 1)");
    require(input_channels >= 1, stage, "input_channels must be >= 1");
  }

  /// DVNet variants. "v1"/"v2"/"v3" are 3-d; "v3-2d" is the 2-d v3 on RGB input.
  /// "desk" is a three-level 3-d network small enough to train on one core.
  static NetworkConfig preset(std::string_view name) {
    NetworkConfig c;
    if (name == "v1") {
      c.theta_down = 0.3;
      c.theta_up = 0.3;
      c.growth_rate = 8;
    } else if (name == "v2") {
      c.theta_down = 0.3;
      c.theta_up = 0.3;
      c.growth_rate = 16;
    } else if (name == "v3") {
    } else if (name == "v3-2d") {
      c.spatial_rank = 2;
      c.input_channels = 3;  // RGB
    } else if (name == "desk") {
      c.levels = {2, 2, 2};
      c.lu_layers = 2;
      c.growth_rate = 4;
      c.input_features = 8;
      c.theta_down = 0.5;
      c.theta_up = 0.5;
      c.dropout_rate = 0;
    } else {
      throw Error("config", "unknown preset '" + std::string(name) + "' (expected v1, v2, v3, v3-2d, desk)");
    }
    return c;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "spatial_rank=" << spatial_rank << '\n' << "levels=";
    for (std::size_t i = 0; i < levels.size(); ++i) os << (i ? "," : "") << levels[i];
    os << '\n'
       << "lu_layers=" << lu_layers << '\n'
       << "growth_rate=" << growth_rate << '\n'
       << "theta_down=" << format_real(theta_down) << '\n'
       << "theta_up=" << format_real(theta_up) << '\n'
       << "input_features=" << input_features << '\n'
       << "num_classes=" << num_classes << '\n'
       << "dropout_rate=" << format_real(dropout_rate) << '\n'
       << "input_channels=" << input_channels << '\n';
    return os.str();
  }

  static NetworkConfig from_text(std::string_view text) {
    const auto kv = parse_key_values(text, "config");
    NetworkConfig c;
    if (auto it = kv.find("preset"); it != kv.end()) c = preset(it->second);
    for (const auto& [key, value] : kv) {
      try {
        if (key == "preset") continue;
        if (key == "spatial_rank") c.spatial_rank = std::stoi(value);
        else if (key == "levels") {
          c.levels.clear();
          std::istringstream ls(value);
          std::string item;
          while (std::getline(ls, item, ',')) c.levels.push_back(std::stoi(item));
        } else if (key == "lu_layers") c.lu_layers = std::stoi(value);
        else if (key == "growth_rate") c.growth_rate = std::stoi(value);
        else if (key == "theta_down") c.theta_down = std::stod(value);
        else if (key == "theta_up") c.theta_up = std::stod(value);
        else if (key == "input_features") c.input_features = std::stoi(value);
        else if (key == "num_classes") c.num_classes = std::stoi(value);
        else if (key == "dropout_rate") c.dropout_rate = std::stod(value);
        else if (key == "input_channels") c.input_channels = std::stoi(value);
        else throw Error("config", "unknown key '" + key + "'");
      } catch (const std::logic_error&) {
        throw Error("config", "bad value for '" + key + "': " + value);
      }
    }
    c.validate();
    return c;
  }

  static NetworkConfig load(const std::string& path) { return from_text(read_text_file(path, "config")); }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// floor(theta * depth), robust to the binary representation of theta.
inline int compress_depth(double theta, int depth) {
  return static_cast<int>(std::floor(theta * depth + 1e-9));
}

}  // namespace dvnet
