// Throughput comparison between the OpenMP kernels and their serial
// reference implementations. Build with -DCMAKE_BUILD_TYPE=Release; the
// parallel variants should win on any multi-core machine while producing
// bit-identical results (see tests/test_kernels.cpp).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dgcvc/kernels.hpp"
#include "dgcvc/signal.hpp"

using namespace dgcvc;

namespace {

Mat random_mat(int r, int c, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat m(r, c);
  for (auto& v : m.data) v = d(rng);
  return m;
}

void bm_matmul_omp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2), c(n, n);
  for (auto _ : state) {
    kernels::matmul(a.data.data(), b.data.data(), c.data.data(), n, n, n);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void bm_matmul_ref(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2), c(n, n);
  for (auto _ : state) {
    kernels::ref::matmul(a.data.data(), b.data.data(), c.data.data(), n, n, n);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void bm_matmul_nt_omp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2), c(n, n);
  for (auto _ : state) {
    kernels::matmul_nt(a.data.data(), b.data.data(), c.data.data(), n, n, n);
    benchmark::ClobberMemory();
  }
}

void bm_matmul_nt_ref(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2), c(n, n);
  for (auto _ : state) {
    kernels::ref::matmul_nt(a.data.data(), b.data.data(), c.data.data(), n, n, n);
    benchmark::ClobberMemory();
  }
}

// whole-pipeline DSP kernel: mel extraction over one second of audio
void bm_compute_mel(benchmark::State& state) {
  signal::FeatureConfig cfg;
  signal::Waveform w;
  w.samples.resize(16000);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 0.1);
  for (auto& s : w.samples) s = d(rng);
  for (auto _ : state) {
    auto m = signal::compute_mel(w, cfg);
    benchmark::DoNotOptimize(m.frames.data.data());
  }
}

}  // namespace

BENCHMARK(bm_matmul_ref)->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(bm_matmul_omp)->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(bm_matmul_nt_ref)->Arg(256);
BENCHMARK(bm_matmul_nt_omp)->Arg(256);
BENCHMARK(bm_compute_mel);

BENCHMARK_MAIN();
