#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wsdf/mesh.hpp"

namespace wsdf {

struct BarSeries {
  std::string label;
  std::vector<double> values;  // one per group
};

// Grouped bar chart: one group per entry of `groups`, one bar per series.
void write_bar_chart_svg(const std::filesystem::path& path, const std::string& title,
                         const std::vector<std::string>& groups, const std::vector<BarSeries>& series);

// Frontal orthographic renders (x right, y up) of a mesh sequence side by
// side, faces shaded by their normal's z component.
void write_mesh_strip_svg(const std::filesystem::path& path, const Topology& topology,
                          const std::vector<Vertices>& frames, double cell_px = 160.0);

}  // namespace wsdf
