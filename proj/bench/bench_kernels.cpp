// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial vs OpenMP timings for the hot kernels. Sizes follow a mid-sized
// dataset: N images, C concepts, Y classes.

#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "cevo/kernels.hpp"
#include "cevo/random.hpp"

namespace {

using cevo::Matrix;
using cevo::kernels::Exec;

template <class T>
Matrix<T> filled(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    cevo::Rng rng(seed);
    Matrix<T> m(rows, cols);
    for (auto& v : m.data()) v = static_cast<T>(rng.uniform());
    return m;
}

Exec exec_of(const benchmark::State& state) { return state.range(1) == 0 ? Exec::serial : Exec::parallel; }

void set_label(benchmark::State& state) {
    state.SetLabel(state.range(1) == 0 ? "serial" : "parallel x" + std::to_string(cevo::kernels::max_threads()));
}

void BM_Logits(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto scores = filled<float>(n, 400, 1);
    const auto weights = filled<float>(400, 200, 2);
    for (auto _ : state) benchmark::DoNotOptimize(cevo::kernels::logits(scores, weights, exec_of(state)));
    set_label(state);
}

void BM_TopkCooccurrence(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto logits = filled<double>(n, 200, 3);
    for (auto _ : state) benchmark::DoNotOptimize(cevo::kernels::topk_cooccurrence(logits, 3, exec_of(state)));
    set_label(state);
}

void BM_ColumnCorrelation(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto logits = filled<double>(n, 200, 4);
    for (auto _ : state) benchmark::DoNotOptimize(cevo::kernels::column_correlation(logits, exec_of(state)));
    set_label(state);
}

void BM_SoftmaxXent(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto scores = filled<double>(n, 400, 5);
    const auto weights = filled<double>(400, 200, 6);
    std::vector<std::size_t> labels(n), rows(n);
    for (std::size_t r = 0; r < n; ++r) labels[r] = r % 200;
    std::iota(rows.begin(), rows.end(), 0);
    Matrix<double> grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(cevo::kernels::softmax_xent(scores, labels, rows, weights, &grad, exec_of(state)));
    }
    set_label(state);
}

void sizes(benchmark::internal::Benchmark* b) {
    for (const int n : {256, 2048})
        for (const int parallel : {0, 1}) b->Args({n, parallel});
    b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Logits)->Apply(sizes);
BENCHMARK(BM_TopkCooccurrence)->Apply(sizes);
BENCHMARK(BM_ColumnCorrelation)->Apply(sizes);
BENCHMARK(BM_SoftmaxXent)->Apply(sizes);

BENCHMARK_MAIN();
