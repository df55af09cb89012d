#include <cmath>
#include <cstring>

#include "wsdf/kernels.hpp"

namespace wsdf::kernels::parallel {

void spiral_gather(std::span<const double> in, int batch, int channels, const GatherIndex& g,
                   std::span<double> out) {
  const int V = g.vertices;
  const int L = g.length;
  const long rows = static_cast<long>(batch) * V;
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const long b = r / V;
    const int v = static_cast<int>(r % V);
    double* dst = out.data() + r * L * channels;
    for (int k = 0; k < L; ++k, dst += channels) {
      const int u = g.index[v * L + k];
      if (u == kSpiralPad) {
        std::memset(dst, 0, sizeof(double) * channels);
      } else {
        std::memcpy(dst, in.data() + (b * V + u) * channels, sizeof(double) * channels);
      }
    }
  }
}

// Each input row sums its own readers, so rows are written by one thread.
void spiral_gather_backward(std::span<const double> grad_out, int batch, int channels,
                            const GatherIndex& g, std::span<double> grad_in) {
  const int V = g.vertices;
  const int L = g.length;
  const long rows = static_cast<long>(batch) * V;
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const long b = r / V;
    const int u = static_cast<int>(r % V);
    double* dst = grad_in.data() + r * channels;
    for (int e = g.rev_offsets[u]; e < g.rev_offsets[u + 1]; ++e) {
      const double* src = grad_out.data() + (b * V * L + g.rev_entries[e]) * channels;
      for (int c = 0; c < channels; ++c) dst[c] += src[c];
    }
  }
}

void cluster_mean(std::span<const double> in, int batch, int channels, const ClusterIndex& ci,
                  std::span<double> out) {
  const long rows = static_cast<long>(batch) * ci.coarse;
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const long b = r / ci.coarse;
    const int k = static_cast<int>(r % ci.coarse);
    double* dst = out.data() + r * channels;
    for (int c = 0; c < channels; ++c) dst[c] = 0.0;
    for (int m = ci.offsets[k]; m < ci.offsets[k + 1]; ++m) {
      const double* src = in.data() + (b * ci.fine + ci.members[m]) * channels;
      for (int c = 0; c < channels; ++c) dst[c] += src[c];
    }
    for (int c = 0; c < channels; ++c) dst[c] *= ci.inv_size[k];
  }
}

void cluster_mean_backward(std::span<const double> grad_out, int batch, int channels,
                           const ClusterIndex& ci, std::span<double> grad_in) {
  const long rows = static_cast<long>(batch) * ci.fine;
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const long b = r / ci.fine;
    const int v = static_cast<int>(r % ci.fine);
    const int k = ci.cluster_of[v];
    const double w = ci.inv_size[k];
    const double* src = grad_out.data() + (b * ci.coarse + k) * channels;
    double* dst = grad_in.data() + r * channels;
    for (int c = 0; c < channels; ++c) dst[c] += src[c] * w;
  }
}

void instance_norm(std::span<const double> in, int batch, int vertices, int channels, double eps,
                   std::span<double> out, std::span<double> inv_std) {
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    const double* x = in.data() + static_cast<std::size_t>(b) * vertices * channels;
    double* y = out.data() + static_cast<std::size_t>(b) * vertices * channels;
    std::vector<double> mean(channels, 0.0);
    std::vector<double> var(channels, 0.0);
    for (int v = 0; v < vertices; ++v) {
      for (int c = 0; c < channels; ++c) mean[c] += x[v * channels + c];
    }
    for (int c = 0; c < channels; ++c) mean[c] /= vertices;
    for (int v = 0; v < vertices; ++v) {
      for (int c = 0; c < channels; ++c) {
        const double d = x[v * channels + c] - mean[c];
        var[c] += d * d;
      }
    }
    double* s = inv_std.data() + static_cast<std::size_t>(b) * channels;
    for (int c = 0; c < channels; ++c) s[c] = 1.0 / std::sqrt(var[c] / vertices + eps);
    for (int v = 0; v < vertices; ++v) {
      for (int c = 0; c < channels; ++c) y[v * channels + c] = (x[v * channels + c] - mean[c]) * s[c];
    }
  }
}

void instance_norm_backward(std::span<const double> grad_out, std::span<const double> normalized,
                            std::span<const double> inv_std, int batch, int vertices, int channels,
                            std::span<double> grad_in) {
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * vertices * channels;
    const double* g = grad_out.data() + base;
    const double* y = normalized.data() + base;
    double* dx = grad_in.data() + base;
    std::vector<double> mean_g(channels, 0.0);
    std::vector<double> mean_gy(channels, 0.0);
    for (int v = 0; v < vertices; ++v) {
      for (int c = 0; c < channels; ++c) {
        mean_g[c] += g[v * channels + c];
        mean_gy[c] += g[v * channels + c] * y[v * channels + c];
      }
    }
    const double* s = inv_std.data() + static_cast<std::size_t>(b) * channels;
    for (int v = 0; v < vertices; ++v) {
      for (int c = 0; c < channels; ++c) {
        const int i = v * channels + c;
        dx[i] += s[c] * (g[i] - mean_g[c] / vertices - y[i] * mean_gy[c] / vertices);
      }
    }
  }
}

}  // namespace wsdf::kernels::parallel
