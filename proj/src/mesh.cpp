#include "wsdf/mesh.hpp"

#include <cmath>

namespace wsdf {

FaceMesh::FaceMesh(TopologyPtr topology, Vertices vertices)
    : topology_(std::move(topology)), vertices_(std::move(vertices)) {
  if (!topology_) throw ValidationError("FaceMesh: null topology");
  if (vertices_.rows() != topology_->vertex_count()) {
    throw ShapeError("FaceMesh: " + std::to_string(vertices_.rows()) + " vertices, topology has " +
                     std::to_string(topology_->vertex_count()));
  }
  if (!vertices_.allFinite()) throw ValidationError("FaceMesh: non-finite coordinate");
}

Vector FaceMesh::flat() const {
  return Eigen::Map<const Vector>(vertices_.data(), vertices_.size());
}

FaceMesh FaceMesh::from_flat(TopologyPtr topology, const Eigen::Ref<const Vector>& flat) {
  if (flat.size() % 3 != 0) throw ShapeError("FaceMesh::from_flat: length not a multiple of 3");
  Vertices v(flat.size() / 3, 3);
  Eigen::Map<Vector>(v.data(), v.size()) = flat;
  return FaceMesh(std::move(topology), std::move(v));
}

void NormalizationStats::validate(int vertex_count) const {
  if (mean.rows() != vertex_count) throw ShapeError("NormalizationStats: mean shape mismatch");
  if (!mean.allFinite() || !std::isfinite(scale)) {
    throw ValidationError("NormalizationStats: non-finite statistics");
  }
  if (!(scale > 0.0)) throw ValidationError("NormalizationStats: scale must be positive");
}

NormalizationStats NormalizationStats::fit(const std::vector<const FaceMesh*>& scans) {
  if (scans.empty()) throw ValidationError("NormalizationStats::fit: no scans");
  const int n_vert = scans.front()->vertex_count();
  NormalizationStats stats;
  stats.mean = Vertices::Zero(n_vert, 3);
  for (const FaceMesh* s : scans) {
    if (s->vertex_count() != n_vert) throw ShapeError("NormalizationStats::fit: mixed topologies");
    stats.mean += s->vertices();
  }
  stats.mean /= static_cast<double>(scans.size());
  double sq = 0.0;
  for (const FaceMesh* s : scans) sq += (s->vertices() - stats.mean).squaredNorm();
  stats.scale = std::sqrt(sq / (static_cast<double>(scans.size()) * n_vert * 3));
  if (!(stats.scale > 0.0)) stats.scale = 1.0;  // all scans identical
  return stats;
}

double average_vertex_distance(const Vertices& a, const Vertices& b) {
  if (a.rows() != b.rows()) throw ShapeError("AVD: vertex count mismatch");
  if (a.rows() == 0) return 0.0;
  return (a - b).rowwise().norm().mean();
}

double average_vertex_distance(const FaceMesh& a, const FaceMesh& b) {
  if (a.topology() != b.topology() && !a.topology()->same_layout(*b.topology())) {
    throw ShapeError("AVD: topology mismatch");
  }
  return average_vertex_distance(a.vertices(), b.vertices());
}

FaceMesh rigid_align(const FaceMesh& source, const FaceMesh& target) {
  if (source.vertex_count() != target.vertex_count()) {
    throw ShapeError("rigid_align: vertex count mismatch");
  }
  const Eigen::RowVector3d cs = source.vertices().colwise().mean();
  const Eigen::RowVector3d ct = target.vertices().colwise().mean();
  const Vertices ps = source.vertices().rowwise() - cs;
  const Vertices pt = target.vertices().rowwise() - ct;

  // Rank check on the centred source: collinear points leave the rotation
  // about their common line undetermined.
  Eigen::JacobiSVD<Eigen::Matrix3d> shape(ps.transpose() * ps);
  const Eigen::Vector3d sv = shape.singularValues();
  if (sv(0) <= 0.0 || sv(1) <= 1e-12 * sv(0)) {
    throw DegeneracyError("rigid_align: source vertices are collinear or coincident");
  }

  const Eigen::Matrix3d cov = ps.transpose() * pt;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  // Row-vector convention: p' = p R^T with R = V D U^T.
  const Eigen::Matrix3d rot = svd.matrixV() * d * svd.matrixU().transpose();
  Vertices out = (ps * rot.transpose()).rowwise() + ct;
  return FaceMesh(source.topology(), std::move(out));
}

FaceMesh normalize(const FaceMesh& mesh, const NormalizationStats& stats) {
  stats.validate(mesh.vertex_count());
  return FaceMesh(mesh.topology(), (mesh.vertices() - stats.mean) / stats.scale);
}

FaceMesh denormalize(const FaceMesh& mesh, const NormalizationStats& stats) {
  stats.validate(mesh.vertex_count());
  return FaceMesh(mesh.topology(), (mesh.vertices() * stats.scale) + stats.mean);
}

}  // namespace wsdf
