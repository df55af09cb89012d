#pragma once

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsdf/errors.hpp"

namespace wsdf {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Face = std::array<int, 3>;

// Marks a padded slot in a spiral sequence; it reads as a zero feature.
inline constexpr int kSpiralPad = -1;

// Fixed registered topology shared by every mesh of a dataset.
//
// Besides the faces, a topology carries the spiral sequence of every vertex
// (center first, then rings in counter-clockwise order starting at the
// lowest-index neighbor) and the vertex adjacency it was derived from.
// Coarse levels of a decimation hierarchy may have too few vertices to form
// triangles, so extra edges can be supplied explicitly.
class Topology {
 public:
  static std::shared_ptr<const Topology> create(int vertex_count, std::vector<Face> faces,
                                                int spiral_length = 9,
                                                std::vector<std::array<int, 2>> extra_edges = {},
                                                Vertices reference = {});

  int vertex_count() const { return vertex_count_; }
  const std::vector<Face>& faces() const { return faces_; }
  int spiral_length() const { return spiral_length_; }
  // Row-major (vertex_count, spiral_length), padded with kSpiralPad.
  const std::vector<int>& spirals() const { return spirals_; }
  std::span<const int> spiral(int v) const {
    return {spirals_.data() + static_cast<std::size_t>(v) * spiral_length_,
            static_cast<std::size_t>(spiral_length_)};
  }
  const std::vector<std::vector<int>>& neighbors() const { return neighbors_; }
  // Template coordinates, empty when unknown.
  const Vertices& reference() const { return reference_; }

  // Neighbors of v ordered by the face fan, counter-clockwise, starting at
  // the lowest-index neighbor. Neighbors outside the fan follow in index order.
  std::vector<int> ordered_ring(int v) const;

  bool same_layout(const Topology& other) const;

 private:
  Topology() = default;
  void build_spirals();

  int vertex_count_ = 0;
  int spiral_length_ = 0;
  std::vector<Face> faces_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<int>> incident_faces_;
  std::vector<int> spirals_;
  Vertices reference_;
};

using TopologyPtr = std::shared_ptr<const Topology>;

// Triangulated (nx, ny) grid with outward normals along +z, used as the
// synthetic face topology.
TopologyPtr make_grid_topology(int nx, int ny, int spiral_length = 9);

class FaceMesh {
 public:
  FaceMesh(TopologyPtr topology, Vertices vertices);

  const Vertices& vertices() const { return vertices_; }
  const TopologyPtr& topology() const { return topology_; }
  int vertex_count() const { return static_cast<int>(vertices_.rows()); }
  // Row-major flattening (x0 y0 z0 x1 ...).
  Vector flat() const;
  static FaceMesh from_flat(TopologyPtr topology, const Eigen::Ref<const Vector>& flat);

 private:
  TopologyPtr topology_;
  Vertices vertices_;
};

struct ScanRecord {
  FaceMesh mesh;
  std::string subject_id;
  // Evaluation only. Nothing on the training path reads it.
  std::optional<std::string> expression_label;
  std::string source_tag;
  std::string path;
};

// Per-coordinate mean mesh and a single positive scale.
struct NormalizationStats {
  Vertices mean;
  double scale = 1.0;

  void validate(int vertex_count) const;
  // Mean over scans; scale is the RMS deviation from that mean over every
  // coordinate.
  static NormalizationStats fit(const std::vector<const FaceMesh*>& scans);
};

double average_vertex_distance(const FaceMesh& a, const FaceMesh& b);
double average_vertex_distance(const Vertices& a, const Vertices& b);

// Rotation + translation (no scale) minimising the summed squared vertex
// distance from source to target.
FaceMesh rigid_align(const FaceMesh& source, const FaceMesh& target);

FaceMesh normalize(const FaceMesh& mesh, const NormalizationStats& stats);
FaceMesh denormalize(const FaceMesh& mesh, const NormalizationStats& stats);

}  // namespace wsdf
