#pragma once

#include <vector>

#include "wsdf/mesh.hpp"

namespace wsdf {

// Topology levels for the spiral encoder. Level 0 is the input topology;
// level s+1 is obtained from level s by greedy vertex clustering, so pooling
// is a mean over each cluster.
struct MeshHierarchy {
  std::vector<TopologyPtr> levels;
  // cluster_of[s][v] = coarse vertex of fine vertex v at level s.
  std::vector<std::vector<int>> cluster_of;
};

// Clusters are grown breadth-first from the lowest unassigned vertex until
// they hold `factor` vertices. Coarse faces are fine faces whose corners land
// in three distinct clusters; coarse adjacency also keeps every fine edge that
// crosses clusters, so connectivity survives even without coarse faces.
MeshHierarchy build_hierarchy(const TopologyPtr& fine, int stages, int factor);

}  // namespace wsdf
