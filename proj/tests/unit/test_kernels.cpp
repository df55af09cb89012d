#include <doctest.h>

#include <vector>

#include "support.hpp"
#include "wsdf/decimation.hpp"
#include "wsdf/kernels.hpp"

using namespace wsdf;
namespace k = wsdf::kernels;

namespace {

std::vector<double> rnd(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Setup {
  TopologyPtr topo = make_grid_topology(9, 7, 9);
  k::GatherIndex g = k::GatherIndex::from_topology(*topo);
  k::ClusterIndex c = k::ClusterIndex::from_assignment(build_hierarchy(topo, 1, 4).cluster_of[0]);
};

}  // namespace

TEST_CASE("spiral gather matches a flat loop over the spiral table") {
  Setup s;
  std::mt19937_64 rng(1);
  const int B = 3, C = 5, V = s.g.vertices, L = s.g.length;
  const auto in = rnd(static_cast<std::size_t>(B * V * C), rng);
  std::vector<double> out(static_cast<std::size_t>(B * V * L * C));
  k::serial::spiral_gather(in, B, C, s.g, out);
  for (int b = 0; b < B; ++b)
    for (int v = 0; v < V; ++v)
      for (int l = 0; l < L; ++l)
        for (int ch = 0; ch < C; ++ch) {
          const int u = s.topo->spiral(v)[l];
          const double want = u == kSpiralPad ? 0.0 : in[static_cast<std::size_t>((b * V + u) * C + ch)];
          CHECK(out[static_cast<std::size_t>(((b * V + v) * L + l) * C + ch)] == want);
        }
}

TEST_CASE("serial and parallel kernels agree") {
  Setup s;
  std::mt19937_64 rng(2);
  for (int B : {1, 4}) {
    for (int C : {1, 3, 16}) {
      const int V = s.g.vertices, L = s.g.length;
      const auto in = rnd(static_cast<std::size_t>(B * V * C), rng);
      std::vector<double> o1(static_cast<std::size_t>(B * V * L * C)), o2(o1.size());
      k::serial::spiral_gather(in, B, C, s.g, o1);
      k::parallel::spiral_gather(in, B, C, s.g, o2);
      CHECK(o1 == o2);

      const auto go = rnd(o1.size(), rng);
      std::vector<double> g1(in.size(), 0.5), g2(in.size(), 0.5);
      k::serial::spiral_gather_backward(go, B, C, s.g, g1);
      k::parallel::spiral_gather_backward(go, B, C, s.g, g2);
      CHECK(max_diff(g1, g2) < 1e-12);

      std::vector<double> p1(static_cast<std::size_t>(B * s.c.coarse * C)), p2(p1.size());
      k::serial::cluster_mean(in, B, C, s.c, p1);
      k::parallel::cluster_mean(in, B, C, s.c, p2);
      CHECK(max_diff(p1, p2) < 1e-14);
      const auto gp = rnd(p1.size(), rng);
      std::vector<double> q1(in.size(), 0.0), q2(in.size(), 0.0);
      k::serial::cluster_mean_backward(gp, B, C, s.c, q1);
      k::parallel::cluster_mean_backward(gp, B, C, s.c, q2);
      CHECK(max_diff(q1, q2) < 1e-14);

      std::vector<double> n1(in.size()), n2(in.size()), i1(static_cast<std::size_t>(B * C)), i2(i1.size());
      k::serial::instance_norm(in, B, V, C, 1e-5, n1, i1);
      k::parallel::instance_norm(in, B, V, C, 1e-5, n2, i2);
      CHECK(max_diff(n1, n2) < 1e-12);
      CHECK(max_diff(i1, i2) < 1e-12);
      const auto gn = rnd(in.size(), rng);
      std::vector<double> r1(in.size(), 0.0), r2(in.size(), 0.0);
      k::serial::instance_norm_backward(gn, n1, i1, B, V, C, r1);
      k::parallel::instance_norm_backward(gn, n2, i2, B, V, C, r2);
      CHECK(max_diff(r1, r2) < 1e-12);
    }
  }
}

TEST_CASE("backward kernels are adjoints of the forward kernels") {
  Setup s;
  std::mt19937_64 rng(3);
  const int B = 2, C = 4, V = s.g.vertices, L = s.g.length;
  const auto x = rnd(static_cast<std::size_t>(B * V * C), rng);
  const auto y = rnd(static_cast<std::size_t>(B * V * L * C), rng);
  std::vector<double> gx(static_cast<std::size_t>(B * V * L * C)), gty(x.size(), 0.0);
  k::parallel::spiral_gather(x, B, C, s.g, gx);
  k::parallel::spiral_gather_backward(y, B, C, s.g, gty);
  CHECK(dot(gx, y) == doctest::Approx(dot(x, gty)).epsilon(1e-12));

  const auto yc = rnd(static_cast<std::size_t>(B * s.c.coarse * C), rng);
  std::vector<double> px(yc.size()), pty(x.size(), 0.0);
  k::parallel::cluster_mean(x, B, C, s.c, px);
  k::parallel::cluster_mean_backward(yc, B, C, s.c, pty);
  CHECK(dot(px, yc) == doctest::Approx(dot(x, pty)).epsilon(1e-12));
}

TEST_CASE("instance norm output has zero mean and unit variance per sample and channel") {
  Setup s;
  std::mt19937_64 rng(4);
  const int B = 2, C = 3, V = s.g.vertices;
  auto in = rnd(static_cast<std::size_t>(B * V * C), rng);
  for (double& v : in) v = 5.0 + 3.0 * v;
  std::vector<double> out(in.size()), inv(static_cast<std::size_t>(B * C));
  k::parallel::instance_norm(in, B, V, C, 1e-5, out, inv);
  for (int b = 0; b < B; ++b)
    for (int ch = 0; ch < C; ++ch) {
      double m = 0, q = 0;
      for (int v = 0; v < V; ++v) m += out[static_cast<std::size_t>((b * V + v) * C + ch)];
      m /= V;
      for (int v = 0; v < V; ++v) q += std::pow(out[static_cast<std::size_t>((b * V + v) * C + ch)] - m, 2);
      CHECK(std::abs(m) < 1e-12);
      CHECK(q / V == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("cluster index covers every fine vertex once") {
  Setup s;
  std::vector<int> count(static_cast<std::size_t>(s.c.fine), 0);
  for (int m : s.c.members) count[static_cast<std::size_t>(m)]++;
  for (int n : count) CHECK(n == 1);
  CHECK(s.c.offsets.back() == s.c.fine);
}
