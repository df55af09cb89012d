#include "wsdf/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace wsdf {
namespace fs = std::filesystem;

namespace {

constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::ofstream open_svg(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

}  // namespace

void write_bar_chart_svg(const fs::path& path, const std::string& title, const std::vector<std::string>& groups,
                         const std::vector<BarSeries>& series) {
  for (const auto& s : series) {
    if (s.values.size() != groups.size()) throw ShapeError("bar chart: series length != group count");
  }
  double vmax = 0.0;
  for (const auto& s : series) {
    for (double v : s.values) if (std::isfinite(v)) vmax = std::max(vmax, v);
  }
  if (vmax <= 0.0) vmax = 1.0;
  const double gw = 40.0 + 24.0 * static_cast<double>(series.size());
  const double w = 80.0 + gw * static_cast<double>(groups.size()) + 160.0, h = 320.0;
  const double x0 = 60.0, y0 = 40.0, ph = 220.0;
  auto os = open_svg(path);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                "font-size=\"11\">\n",
                w, h);
  os << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << x0 << "\" y=\"20\" font-size=\"14\">" << esc(title) << "</text>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", x0,
                y0 + ph, x0 + gw * static_cast<double>(groups.size()), y0 + ph);
  os << buf;
  for (int t = 0; t <= 4; ++t) {
    const double v = vmax * t / 4.0, y = y0 + ph - ph * t / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.3g</text>\n", x0 - 4, y + 4, v);
    os << buf;
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = x0 + gw * static_cast<double>(g) + 20.0;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = series[s].values[g];
      if (!std::isfinite(v)) continue;
      const double bh = ph * v / vmax;
      std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"20\" height=\"%.1f\" fill=\"%s\"/>\n",
                    gx + 24.0 * static_cast<double>(s), y0 + ph - bh, bh, kPalette[s % 6]);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">", gx, y0 + ph + 16);
    os << buf << esc(groups[g]) << "</text>\n";
  }
  const double lx = x0 + gw * static_cast<double>(groups.size()) + 20.0;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double ly = y0 + 18.0 * static_cast<double>(s);
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"%s\"/>\n", lx, ly,
                  kPalette[s % 6]);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">", lx + 16, ly + 10);
    os << buf << esc(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
}

void write_mesh_strip_svg(const fs::path& path, const Topology& topology, const std::vector<Vertices>& frames,
                          double cell_px) {
  if (frames.empty()) throw ValidationError("mesh strip: no frames");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& f : frames) {
    if (f.rows() != topology.vertex_count()) throw ShapeError("mesh strip: frame does not match topology");
    xmin = std::min(xmin, f.col(0).minCoeff());
    xmax = std::max(xmax, f.col(0).maxCoeff());
    ymin = std::min(ymin, f.col(1).minCoeff());
    ymax = std::max(ymax, f.col(1).maxCoeff());
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-12});
  const double s = (cell_px - 10.0) / span;
  auto os = open_svg(path);
  char buf[256];
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n",
                cell_px * static_cast<double>(frames.size()), cell_px);
  os << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Vertices& v = frames[k];
    const double ox = cell_px * static_cast<double>(k) + 5.0;
    // Painter's order: far faces first.
    std::vector<std::size_t> order(topology.faces().size());
    std::iota(order.begin(), order.end(), 0);
    auto depth = [&](std::size_t f) {
      const Face& t = topology.faces()[f];
      return v(t[0], 2) + v(t[1], 2) + v(t[2], 2);
    };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return depth(a) < depth(b); });
    for (std::size_t f : order) {
      const Face& t = topology.faces()[f];
      const Eigen::Vector3d a = v.row(t[0]).transpose(), b = v.row(t[1]).transpose(), c = v.row(t[2]).transpose();
      const Eigen::Vector3d n = (b - a).cross(c - a);
      const double nz = n.norm() > 0 ? std::abs(n.z()) / n.norm() : 0.0;
      const int shade = static_cast<int>(60 + 180 * nz);
      auto px = [&](const Eigen::Vector3d& p) { return ox + (p.x() - xmin) * s; };
      auto py = [&](const Eigen::Vector3d& p) { return cell_px - 5.0 - (p.y() - ymin) * s; };
      std::snprintf(buf, sizeof buf,
                    "<polygon points=\"%.2f,%.2f %.2f,%.2f %.2f,%.2f\" fill=\"rgb(%d,%d,%d)\" stroke=\"none\"/>\n",
                    px(a), py(a), px(b), py(b), px(c), py(c), shade, shade, shade);
      os << buf;
    }
  }
  os << "</svg>\n";
}

}  // namespace wsdf
