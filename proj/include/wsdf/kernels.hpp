#pragma once

// Data-parallel mesh kernels used by the encoder.
//
// Every kernel exists twice: `serial` is the plain reference loop kept for
// testing, `parallel` is the OpenMP version the autodiff ops call. Feature
// maps are row-major (batch * vertices, channels) buffers. Backward kernels
// accumulate into their output.

#include <span>
#include <vector>

#include "wsdf/mesh.hpp"

namespace wsdf::kernels {

struct GatherIndex {
  int vertices = 0;
  int length = 0;
  std::vector<int> index;  // (vertices, length), kSpiralPad reads zero
  // Reverse map: rev_entries[rev_offsets[u] .. rev_offsets[u+1]) are the
  // flat slots v*length + k whose index is u.
  std::vector<int> rev_offsets;
  std::vector<int> rev_entries;

  static GatherIndex from_topology(const Topology& topo);
};

struct ClusterIndex {
  int fine = 0;
  int coarse = 0;
  std::vector<int> cluster_of;  // fine -> coarse
  std::vector<int> offsets;     // CSR of members per coarse vertex
  std::vector<int> members;
  std::vector<double> inv_size;

  static ClusterIndex from_assignment(std::vector<int> cluster_of);
};

namespace serial {

// out: (batch * vertices, length * channels)
void spiral_gather(std::span<const double> in, int batch, int channels, const GatherIndex& g,
                   std::span<double> out);
void spiral_gather_backward(std::span<const double> grad_out, int batch, int channels,
                            const GatherIndex& g, std::span<double> grad_in);

// out: (batch * coarse, channels)
void cluster_mean(std::span<const double> in, int batch, int channels, const ClusterIndex& c,
                  std::span<double> out);
void cluster_mean_backward(std::span<const double> grad_out, int batch, int channels,
                           const ClusterIndex& c, std::span<double> grad_in);

// Normalises every (sample, channel) over vertices. inv_std: (batch, channels).
void instance_norm(std::span<const double> in, int batch, int vertices, int channels, double eps,
                   std::span<double> out, std::span<double> inv_std);
void instance_norm_backward(std::span<const double> grad_out, std::span<const double> normalized,
                            std::span<const double> inv_std, int batch, int vertices, int channels,
                            std::span<double> grad_in);

}  // namespace serial

namespace parallel {

void spiral_gather(std::span<const double> in, int batch, int channels, const GatherIndex& g,
                   std::span<double> out);
void spiral_gather_backward(std::span<const double> grad_out, int batch, int channels,
                            const GatherIndex& g, std::span<double> grad_in);
void cluster_mean(std::span<const double> in, int batch, int channels, const ClusterIndex& c,
                  std::span<double> out);
void cluster_mean_backward(std::span<const double> grad_out, int batch, int channels,
                           const ClusterIndex& c, std::span<double> grad_in);
void instance_norm(std::span<const double> in, int batch, int vertices, int channels, double eps,
                   std::span<double> out, std::span<double> inv_std);
void instance_norm_backward(std::span<const double> grad_out, std::span<const double> normalized,
                            std::span<const double> inv_std, int batch, int vertices, int channels,
                            std::span<double> grad_in);

}  // namespace parallel

}  // namespace wsdf::kernels
