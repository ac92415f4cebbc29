#include <benchmark/benchmark.h>

#include "dilocox/tensor.hpp"

using namespace dilocox;

namespace {

Tensor random_tensor(int64_t rows, int64_t cols, uint64_t seed) {
  RngStream rng(seed, 0xbe);
  return Tensor::uniform({rows, cols}, -1.0f, 1.0f, rng);
}

void BM_Matmul(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  Tensor a = random_tensor(m, k, 1);
  Tensor b = random_tensor(k, n, 2);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * m * k * n);
}
BENCHMARK(BM_Matmul)->Args({4, 512, 768})->Args({256, 512, 256})->Args({64, 64, 64});

void BM_MatmulNT(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  Tensor a = random_tensor(m, k, 1);
  Tensor b = random_tensor(n, k, 2);
  for (auto _ : state) {
    Tensor c = matmul_nt(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * m * k * n);
}
BENCHMARK(BM_MatmulNT)->Args({4, 768, 512});

void BM_SingularValues(benchmark::State& state) {
  const int64_t n = state.range(0);
  Tensor m = random_tensor(n, n, 3);
  for (auto _ : state) {
    auto sv = singular_values(m);
    benchmark::DoNotOptimize(sv.data());
  }
}
BENCHMARK(BM_SingularValues)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Orthonormalize(benchmark::State& state) {
  Tensor m = random_tensor(state.range(0), state.range(1), 4);
  for (auto _ : state) {
    OrthoResult r = orthonormalize(m);
    benchmark::DoNotOptimize(r.q.data());
  }
}
BENCHMARK(BM_Orthonormalize)->Args({512, 64})->Args({768, 128});

}  // namespace
