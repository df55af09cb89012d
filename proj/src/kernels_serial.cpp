#include <cmath>

#include "wsdf/kernels.hpp"

namespace wsdf::kernels {

GatherIndex GatherIndex::from_topology(const Topology& topo) {
  GatherIndex g;
  g.vertices = topo.vertex_count();
  g.length = topo.spiral_length();
  g.index = topo.spirals();
  g.rev_offsets.assign(g.vertices + 1, 0);
  for (int u : g.index) {
    if (u != kSpiralPad) ++g.rev_offsets[u + 1];
  }
  for (int v = 0; v < g.vertices; ++v) g.rev_offsets[v + 1] += g.rev_offsets[v];
  g.rev_entries.resize(g.rev_offsets.back());
  std::vector<int> fill(g.rev_offsets.begin(), g.rev_offsets.end() - 1);
  for (int slot = 0; slot < static_cast<int>(g.index.size()); ++slot) {
    const int u = g.index[slot];
    if (u != kSpiralPad) g.rev_entries[fill[u]++] = slot;
  }
  return g;
}

ClusterIndex ClusterIndex::from_assignment(std::vector<int> cluster_of) {
  ClusterIndex c;
  c.fine = static_cast<int>(cluster_of.size());
  c.coarse = 0;
  for (int k : cluster_of) {
    if (k < 0) throw ValidationError("ClusterIndex: unassigned vertex");
    c.coarse = std::max(c.coarse, k + 1);
  }
  c.offsets.assign(c.coarse + 1, 0);
  for (int k : cluster_of) ++c.offsets[k + 1];
  for (int k = 0; k < c.coarse; ++k) c.offsets[k + 1] += c.offsets[k];
  c.members.resize(c.fine);
  std::vector<int> fill(c.offsets.begin(), c.offsets.end() - 1);
  for (int v = 0; v < c.fine; ++v) c.members[fill[cluster_of[v]]++] = v;
  c.inv_size.resize(c.coarse);
  for (int k = 0; k < c.coarse; ++k) {
    const int n = c.offsets[k + 1] - c.offsets[k];
    if (n == 0) throw ValidationError("ClusterIndex: empty cluster");
    c.inv_size[k] = 1.0 / n;
  }
  c.cluster_of = std::move(cluster_of);
  return c;
}

namespace serial {

void spiral_gather(std::span<const double> in, int batch, int channels, const GatherIndex& g,
                   std::span<double> out) {
  const int V = g.vertices;
  const int L = g.length;
  for (int b = 0; b < batch; ++b) {
    for (int v = 0; v < V; ++v) {
      for (int k = 0; k < L; ++k) {
        const int u = g.index[v * L + k];
        double* dst = out.data() + ((static_cast<std::size_t>(b) * V + v) * L + k) * channels;
        for (int c = 0; c < channels; ++c) {
          dst[c] = (u == kSpiralPad) ? 0.0 : in[(static_cast<std::size_t>(b) * V + u) * channels + c];
        }
      }
    }
  }
}

void spiral_gather_backward(std::span<const double> grad_out, int batch, int channels,
                            const GatherIndex& g, std::span<double> grad_in) {
  const int V = g.vertices;
  const int L = g.length;
  for (int b = 0; b < batch; ++b) {
    for (int v = 0; v < V; ++v) {
      for (int k = 0; k < L; ++k) {
        const int u = g.index[v * L + k];
        if (u == kSpiralPad) continue;
        const double* src =
            grad_out.data() + ((static_cast<std::size_t>(b) * V + v) * L + k) * channels;
        for (int c = 0; c < channels; ++c) {
          grad_in[(static_cast<std::size_t>(b) * V + u) * channels + c] += src[c];
        }
      }
    }
  }
}

void cluster_mean(std::span<const double> in, int batch, int channels, const ClusterIndex& ci,
                  std::span<double> out) {
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch) * ci.coarse * channels; ++i) out[i] = 0.0;
  for (int b = 0; b < batch; ++b) {
    for (int v = 0; v < ci.fine; ++v) {
      const int k = ci.cluster_of[v];
      for (int c = 0; c < channels; ++c) {
        out[(static_cast<std::size_t>(b) * ci.coarse + k) * channels + c] +=
            in[(static_cast<std::size_t>(b) * ci.fine + v) * channels + c] * ci.inv_size[k];
      }
    }
  }
}

void cluster_mean_backward(std::span<const double> grad_out, int batch, int channels,
                           const ClusterIndex& ci, std::span<double> grad_in) {
  for (int b = 0; b < batch; ++b) {
    for (int v = 0; v < ci.fine; ++v) {
      const int k = ci.cluster_of[v];
      for (int c = 0; c < channels; ++c) {
        grad_in[(static_cast<std::size_t>(b) * ci.fine + v) * channels + c] +=
            grad_out[(static_cast<std::size_t>(b) * ci.coarse + k) * channels + c] * ci.inv_size[k];
      }
    }
  }
}

void instance_norm(std::span<const double> in, int batch, int vertices, int channels, double eps,
                   std::span<double> out, std::span<double> inv_std) {
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      double mean = 0.0;
      for (int v = 0; v < vertices; ++v) mean += in[(static_cast<std::size_t>(b) * vertices + v) * channels + c];
      mean /= vertices;
      double var = 0.0;
      for (int v = 0; v < vertices; ++v) {
        const double d = in[(static_cast<std::size_t>(b) * vertices + v) * channels + c] - mean;
        var += d * d;
      }
      var /= vertices;
      const double s = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(b) * channels + c] = s;
      for (int v = 0; v < vertices; ++v) {
        const std::size_t i = (static_cast<std::size_t>(b) * vertices + v) * channels + c;
        out[i] = (in[i] - mean) * s;
      }
    }
  }
}

void instance_norm_backward(std::span<const double> grad_out, std::span<const double> normalized,
                            std::span<const double> inv_std, int batch, int vertices, int channels,
                            std::span<double> grad_in) {
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      double mean_g = 0.0;
      double mean_gy = 0.0;
      for (int v = 0; v < vertices; ++v) {
        const std::size_t i = (static_cast<std::size_t>(b) * vertices + v) * channels + c;
        mean_g += grad_out[i];
        mean_gy += grad_out[i] * normalized[i];
      }
      mean_g /= vertices;
      mean_gy /= vertices;
      const double s = inv_std[static_cast<std::size_t>(b) * channels + c];
      for (int v = 0; v < vertices; ++v) {
        const std::size_t i = (static_cast<std::size_t>(b) * vertices + v) * channels + c;
        grad_in[i] += s * (grad_out[i] - mean_g - normalized[i] * mean_gy);
      }
    }
  }
}

}  // namespace serial
}  // namespace wsdf::kernels
