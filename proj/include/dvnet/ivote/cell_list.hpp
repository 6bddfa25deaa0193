#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/net/config.hpp"

namespace dvnet {

/// A detected or ground-truth cell center in voxel coordinates.
struct Cell {
  double x = 0, y = 0, z = 0;
  /// Accumulated vote (1 for ground truth).
  double confidence = 1;
  /// Radius in voxels.
  double radius = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
};

using CellList = std::vector<Cell>;

inline std::string cells_to_csv(const CellList& cells) {
  std::ostringstream os;
  os << "x,y,z,confidence,radius\n";
  for (const auto& c : cells)
    os << format_real(c.x) << ',' << format_real(c.y) << ',' << format_real(c.z) << ',' << format_real(c.confidence)
       << ',' << format_real(c.radius) << '\n';
  return os.str();
}

inline CellList cells_from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "cells", "empty cell list file");
  require(line.rfind("x,y,z,confidence,radius", 0) == 0, "cells", "unexpected header: " + line);
  CellList out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string f[5];
    for (auto& s : f) std::getline(ls, s, ',');
    try {
      out.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::logic_error&) {
      throw Error("cells", "line " + std::to_string(lineno) + ": expected five numbers");
    }
  }
  return out;
}

inline void save_cells(const CellList& cells, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cells", "cannot write " + path);
  out << cells_to_csv(cells);
}

inline CellList load_cells(const std::string& path) { return cells_from_csv(read_text_file(path, "cells")); }

}  // namespace dvnet
