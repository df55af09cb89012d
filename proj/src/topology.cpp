#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>

#include "wsdf/decimation.hpp"
#include "wsdf/mesh.hpp"

namespace wsdf {

std::shared_ptr<const Topology> Topology::create(int vertex_count, std::vector<Face> faces,
                                                 int spiral_length,
                                                 std::vector<std::array<int, 2>> extra_edges,
                                                 Vertices reference) {
  if (vertex_count <= 0) throw ValidationError("Topology: vertex_count must be positive");
  if (spiral_length < 1) throw ValidationError("Topology: spiral_length must be >= 1");
  if (reference.rows() != 0 && reference.rows() != vertex_count) {
    throw ShapeError("Topology: reference mesh has wrong vertex count");
  }
  std::shared_ptr<Topology> topo(new Topology());
  topo->vertex_count_ = vertex_count;
  topo->spiral_length_ = spiral_length;
  topo->reference_ = std::move(reference);

  std::vector<std::set<int>> adj(vertex_count);
  topo->incident_faces_.assign(vertex_count, {});
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    for (int idx : face) {
      if (idx < 0 || idx >= vertex_count) {
        throw ValidationError("Topology: face index " + std::to_string(idx) + " out of range");
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw ValidationError("Topology: degenerate face");
    }
    for (int k = 0; k < 3; ++k) {
      adj[face[k]].insert(face[(k + 1) % 3]);
      adj[face[(k + 1) % 3]].insert(face[k]);
      topo->incident_faces_[face[k]].push_back(static_cast<int>(f));
    }
  }
  for (const auto& e : extra_edges) {
    if (e[0] < 0 || e[1] < 0 || e[0] >= vertex_count || e[1] >= vertex_count) {
      throw ValidationError("Topology: edge index out of range");
    }
    if (e[0] == e[1]) continue;
    adj[e[0]].insert(e[1]);
    adj[e[1]].insert(e[0]);
  }
  topo->faces_ = std::move(faces);
  topo->neighbors_.resize(vertex_count);
  for (int v = 0; v < vertex_count; ++v) topo->neighbors_[v].assign(adj[v].begin(), adj[v].end());

  // Connectivity.
  std::vector<char> seen(vertex_count, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int w : topo->neighbors_[u]) {
      if (!seen[w]) {
        seen[w] = 1;
        ++reached;
        q.push(w);
      }
    }
  }
  if (reached != vertex_count) throw ValidationError("Topology: mesh graph is not connected");

  topo->build_spirals();
  return topo;
}

std::vector<int> Topology::ordered_ring(int v) const {
  const auto& nbrs = neighbors_.at(v);
  if (nbrs.empty()) return {};
  std::map<int, int> next;
  std::map<int, int> prev;
  for (int f : incident_faces_[v]) {
    const Face& face = faces_[f];
    int k = 0;
    while (face[k] != v) ++k;
    const int p = face[(k + 1) % 3];
    const int r = face[(k + 2) % 3];
    next.emplace(p, r);  // first face wins on non-manifold fans
    prev.emplace(r, p);
  }
  const int start = nbrs.front();  // neighbors_ is sorted
  std::vector<int> ring{start};
  std::set<int> used{start};
  for (auto it = next.find(start); it != next.end() && !used.count(it->second);
       it = next.find(it->second)) {
    ring.push_back(it->second);
    used.insert(it->second);
  }
  // Open fan: the part preceding `start`, in counter-clockwise order.
  std::vector<int> before;
  for (auto it = prev.find(start); it != prev.end() && !used.count(it->second);
       it = prev.find(it->second)) {
    before.push_back(it->second);
    used.insert(it->second);
  }
  ring.insert(ring.end(), before.rbegin(), before.rend());
  for (int w : nbrs) {
    if (!used.count(w)) ring.push_back(w);
  }
  return ring;
}

void Topology::build_spirals() {
  spirals_.assign(static_cast<std::size_t>(vertex_count_) * spiral_length_, kSpiralPad);
  std::vector<std::vector<int>> rings(vertex_count_);
  for (int v = 0; v < vertex_count_; ++v) rings[v] = ordered_ring(v);
  std::vector<int> mark(vertex_count_, -1);
  for (int v = 0; v < vertex_count_; ++v) {
    std::vector<int> seq{v};
    mark[v] = v;
    std::vector<int> frontier{v};
    while (static_cast<int>(seq.size()) < spiral_length_ && !frontier.empty()) {
      std::vector<int> next_frontier;
      for (int u : frontier) {
        for (int w : rings[u]) {
          if (mark[w] == v) continue;
          mark[w] = v;
          seq.push_back(w);
          next_frontier.push_back(w);
        }
      }
      frontier = std::move(next_frontier);
    }
    const int n = std::min<int>(spiral_length_, static_cast<int>(seq.size()));
    std::copy_n(seq.begin(), n, spirals_.begin() + static_cast<std::ptrdiff_t>(v) * spiral_length_);
  }
}

bool Topology::same_layout(const Topology& other) const {
  return vertex_count_ == other.vertex_count_ && faces_ == other.faces_;
}

TopologyPtr make_grid_topology(int nx, int ny, int spiral_length) {
  if (nx < 2 || ny < 2) throw ValidationError("make_grid_topology: need at least 2x2 vertices");
  std::vector<Face> faces;
  faces.reserve(static_cast<std::size_t>(2 * (nx - 1) * (ny - 1)));
  auto id = [nx](int i, int j) { return j * nx + i; };
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      // Counter-clockwise seen from +z.
      faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  Vertices ref(nx * ny, 3);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      ref.row(id(i, j)) << (i - 0.5 * (nx - 1)) / (nx - 1), (j - 0.5 * (ny - 1)) / (nx - 1), 0.0;
    }
  }
  return Topology::create(nx * ny, std::move(faces), spiral_length, {}, std::move(ref));
}

MeshHierarchy build_hierarchy(const TopologyPtr& fine, int stages, int factor) {
  if (stages < 0) throw ValidationError("build_hierarchy: negative stage count");
  if (factor < 1) throw ValidationError("build_hierarchy: factor must be >= 1");
  MeshHierarchy h;
  h.levels.push_back(fine);
  for (int s = 0; s < stages; ++s) {
    const Topology& cur = *h.levels.back();
    const int n = cur.vertex_count();
    std::vector<int> cluster(n, -1);
    int n_clusters = 0;
    for (int v = 0; v < n; ++v) {
      if (cluster[v] != -1) continue;
      const int c = n_clusters++;
      int size = 0;
      std::queue<int> q;
      q.push(v);
      cluster[v] = c;
      ++size;
      while (!q.empty() && size < factor) {
        const int u = q.front();
        q.pop();
        for (int w : cur.ordered_ring(u)) {
          if (size >= factor) break;
          if (cluster[w] != -1) continue;
          cluster[w] = c;
          ++size;
          q.push(w);
        }
      }
    }
    std::set<std::array<int, 3>> seen_faces;
    std::vector<Face> coarse_faces;
    for (const Face& f : cur.faces()) {
      const Face cf{cluster[f[0]], cluster[f[1]], cluster[f[2]]};
      if (cf[0] == cf[1] || cf[1] == cf[2] || cf[0] == cf[2]) continue;
      std::array<int, 3> key = cf;
      std::sort(key.begin(), key.end());
      if (seen_faces.insert(key).second) coarse_faces.push_back(cf);
    }
    std::set<std::array<int, 2>> edge_set;
    for (int v = 0; v < n; ++v) {
      for (int w : cur.neighbors()[v]) {
        const int a = cluster[v];
        const int b = cluster[w];
        if (a != b) edge_set.insert({std::min(a, b), std::max(a, b)});
      }
    }
    Vertices ref;
    if (cur.reference().rows() == n) {
      ref = Vertices::Zero(n_clusters, 3);
      std::vector<int> count(n_clusters, 0);
      for (int v = 0; v < n; ++v) {
        ref.row(cluster[v]) += cur.reference().row(v);
        ++count[cluster[v]];
      }
      for (int c = 0; c < n_clusters; ++c) ref.row(c) /= count[c];
    }
    h.levels.push_back(Topology::create(n_clusters, std::move(coarse_faces), cur.spiral_length(),
                                        {edge_set.begin(), edge_set.end()}, std::move(ref)));
    h.cluster_of.push_back(std::move(cluster));
  }
  return h;
}

}  // namespace wsdf
