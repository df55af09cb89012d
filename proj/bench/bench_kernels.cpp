// Serial reference kernels against their OpenMP counterparts on the default
// 25x20 grid with a batch of 32.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "wsdf/decimation.hpp"
#include "wsdf/kernels.hpp"

namespace {

using namespace wsdf;

struct Fixture {
  TopologyPtr topo = make_grid_topology(25, 20, 9);
  kernels::GatherIndex gather = kernels::GatherIndex::from_topology(*topo);
  kernels::ClusterIndex pool = kernels::ClusterIndex::from_assignment(build_hierarchy(topo, 1, 4).cluster_of[0]);
  int batch = 32;

  std::vector<double> random(std::size_t n) const {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

template <bool Parallel>
void BM_SpiralGather(benchmark::State& state) {
  const auto& f = fixture();
  const int ch = static_cast<int>(state.range(0));
  const auto in = f.random(static_cast<std::size_t>(f.batch) * f.gather.vertices * ch);
  std::vector<double> out(in.size() * static_cast<std::size_t>(f.gather.length));
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::spiral_gather(in, f.batch, ch, f.gather, out);
    else kernels::serial::spiral_gather(in, f.batch, ch, f.gather, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_SpiralGatherBackward(benchmark::State& state) {
  const auto& f = fixture();
  const int ch = static_cast<int>(state.range(0));
  const std::size_t n = static_cast<std::size_t>(f.batch) * f.gather.vertices * ch;
  const auto g = f.random(n * static_cast<std::size_t>(f.gather.length));
  std::vector<double> out(n);
  for (auto _ : state) {
    std::fill(out.begin(), out.end(), 0.0);
    if constexpr (Parallel) kernels::parallel::spiral_gather_backward(g, f.batch, ch, f.gather, out);
    else kernels::serial::spiral_gather_backward(g, f.batch, ch, f.gather, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_ClusterMean(benchmark::State& state) {
  const auto& f = fixture();
  const int ch = static_cast<int>(state.range(0));
  const auto in = f.random(static_cast<std::size_t>(f.batch) * f.pool.fine * ch);
  std::vector<double> out(static_cast<std::size_t>(f.batch) * f.pool.coarse * ch);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::cluster_mean(in, f.batch, ch, f.pool, out);
    else kernels::serial::cluster_mean(in, f.batch, ch, f.pool, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_InstanceNorm(benchmark::State& state) {
  const auto& f = fixture();
  const int ch = static_cast<int>(state.range(0));
  const int nv = f.gather.vertices;
  const auto in = f.random(static_cast<std::size_t>(f.batch) * nv * ch);
  std::vector<double> out(in.size()), inv(static_cast<std::size_t>(f.batch) * ch);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::instance_norm(in, f.batch, nv, ch, 1e-5, out, inv);
    else kernels::serial::instance_norm(in, f.batch, nv, ch, 1e-5, out, inv);
    benchmark::DoNotOptimize(out.data());
  }
}

BENCHMARK(BM_SpiralGather<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_SpiralGather<true>)->Arg(16)->Arg(64);
BENCHMARK(BM_SpiralGatherBackward<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_SpiralGatherBackward<true>)->Arg(16)->Arg(64);
BENCHMARK(BM_ClusterMean<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_ClusterMean<true>)->Arg(16)->Arg(64);
BENCHMARK(BM_InstanceNorm<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_InstanceNorm<true>)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
