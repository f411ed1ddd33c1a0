// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "sim/nn/kernels.hpp"
#include "sim/rng.hpp"

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
    sim::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const std::size_t k = 64, n = 64;
    auto a = randn(m * k, 1), b = randn(k * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            sim::nn::kernels::matmul(a, b, c, m, k, n);
        else
            sim::nn::kernels::matmul_serial(a, b, c, m, k, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long long>(m * k * n));
}

template <bool Parallel>
void BM_MatmulWeightGrad(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const std::size_t k = 64, n = 64;
    auto a = randn(m * k, 3), g = randn(m * n, 4);
    std::vector<double> c(k * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            sim::nn::kernels::matmul_tn_acc(a, g, c, m, k, n);
        else
            sim::nn::kernels::matmul_tn_acc_serial(a, g, c, m, k, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long long>(m * k * n));
}

} // namespace

BENCHMARK(BM_Matmul<true>)->Arg(512)->Arg(4096);
BENCHMARK(BM_Matmul<false>)->Arg(512)->Arg(4096);
BENCHMARK(BM_MatmulWeightGrad<true>)->Arg(512)->Arg(4096);
BENCHMARK(BM_MatmulWeightGrad<false>)->Arg(512)->Arg(4096);

BENCHMARK_MAIN();
