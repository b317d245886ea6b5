#include <benchmark/benchmark.h>

#include <vector>

#include "cg3d/nn/kernels.hpp"
#include "cg3d/util/rng.hpp"

using namespace cg3d;

namespace {

std::vector<float> randf(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(normal01(rng));
  return v;
}

std::vector<double> randd(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = normal01(rng);
  return v;
}

// Shapes from the encoders: point MLP layers, attention projections.
template <bool Parallel>
void BM_gemm(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), n = static_cast<std::size_t>(st.range(1)),
             k = static_cast<std::size_t>(st.range(2));
  const auto a = randf(m * k, 1), b = randf(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : st) {
    if constexpr (Parallel) nn::kernels::gemm<float>(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    else nn::reference::gemm<float>(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * m * n * k));
}

template <bool Parallel>
void BM_softmax(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(0)), cols = static_cast<std::size_t>(st.range(1));
  const auto src = randf(rows * cols, 3);
  auto x = src;
  for (auto _ : st) {
    x = src;
    if constexpr (Parallel) nn::kernels::softmax_rows(x.data(), rows, cols);
    else nn::reference::softmax_rows(x.data(), rows, cols);
    benchmark::DoNotOptimize(x.data());
  }
}

template <bool Parallel>
void BM_max_pool(benchmark::State& st) {
  const std::size_t groups = 32, per = static_cast<std::size_t>(st.range(0)), cols = 256;
  const auto x = randf(groups * per * cols, 4);
  std::vector<float> out(groups * cols);
  std::vector<std::size_t> arg(groups * cols);
  for (auto _ : st) {
    if constexpr (Parallel) nn::kernels::max_pool_groups(x.data(), groups, per, cols, out.data(), arg.data());
    else nn::reference::max_pool_groups(x.data(), groups, per, cols, out.data(), arg.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_assign(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0));
  const std::size_t k = 8;
  const auto p = randd(3 * m, 5), c = randd(3 * k, 6);
  std::vector<int> a(m);
  std::vector<double> d(m);
  for (auto _ : st) {
    if constexpr (Parallel) nn::kernels::assign_nearest(p.data(), m, c.data(), k, a.data(), d.data());
    else nn::reference::assign_nearest(p.data(), m, c.data(), k, a.data(), d.data());
    benchmark::DoNotOptimize(a.data());
  }
}

}  // namespace

#define SHAPES ->Args({8192, 64, 3})->Args({8192, 256, 128})->Args({2240, 192, 64})->Args({2240, 64, 256})
BENCHMARK(BM_gemm<true>) SHAPES;
BENCHMARK(BM_gemm<false>) SHAPES;
BENCHMARK(BM_softmax<true>)->Args({2240, 70})->Args({32, 32});
BENCHMARK(BM_softmax<false>)->Args({2240, 70})->Args({32, 32});
BENCHMARK(BM_max_pool<true>)->Arg(256)->Arg(1024);
BENCHMARK(BM_max_pool<false>)->Arg(256)->Arg(1024);
BENCHMARK(BM_assign<true>)->Arg(30000)->Arg(600000);
BENCHMARK(BM_assign<false>)->Arg(30000)->Arg(600000);

BENCHMARK_MAIN();
