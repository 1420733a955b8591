// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gpsd/kernels.hpp"

namespace {

using namespace gpsd::kernels;

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state, Trans ta, Trans tb) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GemmShape shape{n, n, n};
  auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::gemm(ta, tb, shape, a.data(), b.data(), c.data(), false);
    } else {
      serial::gemm(ta, tb, shape, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const AttentionShape shape{64, static_cast<std::size_t>(state.range(0)), 4, 16, true};
  const std::size_t rows = shape.batch * shape.seq, width = shape.heads * shape.head_dim;
  auto q = random_vector(rows * width, 1), k = random_vector(rows * width, 2),
       v = random_vector(rows * width, 3), dout = random_vector(rows * width, 4);
  std::vector<std::size_t> lengths(shape.batch, shape.seq);
  std::vector<float> probs(shape.batch * shape.heads * shape.seq * shape.seq), out(rows * width),
      dq(rows * width), dk(rows * width), dv(rows * width);
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::attention_forward(shape, lengths.data(), q.data(), k.data(), v.data(),
                                  probs.data(), out.data());
      parallel::attention_backward(shape, lengths.data(), q.data(), k.data(), v.data(),
                                   probs.data(), dout.data(), dq.data(), dk.data(), dv.data());
    } else {
      serial::attention_forward(shape, lengths.data(), q.data(), k.data(), v.data(),
                                probs.data(), out.data());
      serial::attention_backward(shape, lengths.data(), q.data(), k.data(), v.data(),
                                 probs.data(), dout.data(), dq.data(), dk.data(), dv.data());
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

void BM_GemmSerialNN(benchmark::State& s) { BM_Gemm<false>(s, Trans::kNo, Trans::kNo); }
void BM_GemmParallelNN(benchmark::State& s) { BM_Gemm<true>(s, Trans::kNo, Trans::kNo); }
void BM_GemmSerialNT(benchmark::State& s) { BM_Gemm<false>(s, Trans::kNo, Trans::kYes); }
void BM_GemmParallelNT(benchmark::State& s) { BM_Gemm<true>(s, Trans::kNo, Trans::kYes); }
void BM_GemmSerialTN(benchmark::State& s) { BM_Gemm<false>(s, Trans::kYes, Trans::kNo); }
void BM_GemmParallelTN(benchmark::State& s) { BM_Gemm<true>(s, Trans::kYes, Trans::kNo); }

BENCHMARK(BM_GemmSerialNN)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmParallelNN)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmSerialNT)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmParallelNT)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmSerialTN)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmParallelTN)->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<false>)->Arg(20)->Arg(50);
BENCHMARK(BM_Attention<true>)->Arg(20)->Arg(50);

}  // namespace

BENCHMARK_MAIN();
