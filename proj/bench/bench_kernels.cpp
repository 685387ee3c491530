// Serial reference vs. OpenMP GEMM, and the efficient GTM vs. its dense
// (T*C) x (T*C) operator. Pass --threads=N through MLP3D_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mlp3d/gtm.hpp"
#include "mlp3d/kernels.hpp"
#include "mlp3d/ops.hpp"

namespace {

using namespace mlp3d;

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * k, 1), b = filled(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm(m, n, k, a.data(), b.data(), c.data(), false);
    else
      kernels::serial::gemm(m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * k));
  state.counters["threads"] = Parallel ? kernels::num_threads() : 1;
}

// Stage-1 shapes of the micro network: 8x8 tokens x 4 steps, and wider.
#define GEMM_SHAPES ->Args({256, 16, 64})->Args({2048, 64, 256})->Args({4096, 128, 128})
BENCHMARK(BM_Gemm<false>) GEMM_SHAPES;
BENCHMARK(BM_Gemm<true>) GEMM_SHAPES;

void BM_GtmEfficient(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const std::size_t c = 32, hw = 64;
  std::mt19937_64 rng(3);
  const GtmConfig cfg{GtmKind::long_range, s, true};
  const auto w = make_gtm_weights<float>(cfg, c, 0, &rng, 0.1);
  const auto x = Tensor<float>::from({hw, 1, t, c}, filled(hw * t * c, 4));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(gtm_apply(cfg, w, x).data().data());
  state.counters["macs"] = static_cast<double>(gtm_flop_count(cfg, hw, 1, t, c));
}

void BM_GtmDense(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const std::size_t c = 32, hw = 64;
  std::mt19937_64 rng(3);
  const GtmConfig cfg{GtmKind::long_range, s, true};
  const auto w = make_gtm_weights<float>(cfg, c, 0, &rng, 0.1);
  const auto dense = build_dense_time_matrix(cfg, t, w);
  const auto x = Tensor<float>::from({hw, t * c}, filled(hw * t * c, 4));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(x, dense).data().data());
  state.counters["macs"] = static_cast<double>(hw * t * c * t * c);
}

#define GTM_SHAPES ->Args({16, 2})->Args({16, 4})->Args({32, 4})->Args({64, 4})
BENCHMARK(BM_GtmEfficient) GTM_SHAPES;
BENCHMARK(BM_GtmDense) GTM_SHAPES;

}  // namespace

BENCHMARK_MAIN();
