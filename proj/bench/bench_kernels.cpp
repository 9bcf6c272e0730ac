// OpenMP kernels against their serial references.
//
//   ./bench_kernels --benchmark_counters_tabular=true

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "ddfx/kernels.hpp"

namespace k = ddfx::kernels;

namespace {

std::vector<double> filled(std::int64_t n, unsigned seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = u(g);
    return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& st) {
    const std::int64_t n = st.range(0);
    const k::GemmDims d{n, n, n};
    const auto a = filled(n * n, 1), b = filled(n * n, 2);
    std::vector<double> c(static_cast<std::size_t>(n * n));
    for (auto _ : st) {
        if constexpr (Parallel)
            k::gemm(false, true, d, a.data(), b.data(), c.data(), false);
        else
            k::reference::gemm(false, true, d, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * 2 * n * n * n);
}

template <bool Parallel>
void BM_conv(benchmark::State& st) {
    const std::int64_t hw = st.range(0);
    const k::ConvDims d{4, hw, hw, 16, 16};
    const auto x = filled(d.batch * hw * hw * d.in_ch, 3), w = filled(d.out_ch * 9 * d.in_ch, 4);
    std::vector<double> y(static_cast<std::size_t>(d.batch * hw * hw * d.out_ch));
    for (auto _ : st) {
        if constexpr (Parallel)
            k::conv3x3(d, x.data(), w.data(), y.data());
        else
            k::reference::conv3x3(d, x.data(), w.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
    st.SetItemsProcessed(st.iterations() * 2 * 9 * d.batch * hw * hw * d.in_ch * d.out_ch);
}

template <bool Parallel>
void BM_conv_grad_weight(benchmark::State& st) {
    const std::int64_t hw = st.range(0);
    const k::ConvDims d{4, hw, hw, 16, 16};
    const auto x = filled(d.batch * hw * hw * d.in_ch, 5), dy = filled(d.batch * hw * hw * d.out_ch, 6);
    std::vector<double> dw(static_cast<std::size_t>(d.out_ch * 9 * d.in_ch));
    for (auto _ : st) {
        if constexpr (Parallel)
            k::conv3x3_grad_weight(d, x.data(), dy.data(), dw.data());
        else
            k::reference::conv3x3_grad_weight(d, x.data(), dy.data(), dw.data());
        benchmark::DoNotOptimize(dw.data());
    }
}

}  // namespace

BENCHMARK(BM_gemm<true>)->Name("gemm/openmp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_conv<true>)->Name("conv3x3/openmp")->Arg(16)->Arg(32);
BENCHMARK(BM_conv<false>)->Name("conv3x3/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_conv_grad_weight<true>)->Name("conv3x3_grad_weight/openmp")->Arg(32);
BENCHMARK(BM_conv_grad_weight<false>)->Name("conv3x3_grad_weight/serial")->Arg(32);

BENCHMARK_MAIN();
