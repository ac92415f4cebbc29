#include <benchmark/benchmark.h>

#include "dilocox/compress.hpp"

using namespace dilocox;

namespace {

ParamSet gaussian_delta(int64_t rows, int64_t cols, uint64_t seed) {
  RngStream rng(seed, 0x9a);
  ParamSet ps;
  ps.add("w", Tensor::gaussian({rows, cols}, rng));
  ps.add("b", Tensor::gaussian({cols}, rng));
  return ps;
}

void BM_Compress(benchmark::State& state) {
  const int rank = static_cast<int>(state.range(0));
  const int qbits = static_cast<int>(state.range(1));
  ParamSet delta = gaussian_delta(512, 768, 1);
  QuantSpec spec;
  spec.qbits = qbits;
  for (auto _ : state) {
    RngStream rng(7, 7);
    CompressResult res = compress(delta, rank, spec, nullptr, 2, rng);
    benchmark::DoNotOptimize(res.delta.payload_bits);
  }
  state.SetLabel("bits=" + std::to_string([&] {
    RngStream rng(7, 7);
    return compress(delta, rank, spec, nullptr, 2, rng).delta.payload_bits;
  }()));
}
BENCHMARK(BM_Compress)->Args({16, 4})->Args({64, 4})->Args({128, 8})->Unit(benchmark::kMillisecond);

void BM_Decompress(benchmark::State& state) {
  ParamSet delta = gaussian_delta(512, 768, 2);
  QuantSpec spec;
  RngStream rng(8, 8);
  CompressResult res = compress(delta, static_cast<int>(state.range(0)), spec, nullptr, 2, rng);
  for (auto _ : state) {
    ParamSet back = decompress(res.delta);
    benchmark::DoNotOptimize(back.count());
  }
}
BENCHMARK(BM_Decompress)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Quantize(benchmark::State& state) {
  RngStream data(3, 0);
  std::vector<float> xs(static_cast<size_t>(state.range(0)));
  for (float& v : xs) v = data.normal();
  QuantSpec spec;
  spec.qbits = 4;
  for (auto _ : state) {
    RngStream rng(4, 4);
    QuantChunk c = quantize(xs.data(), static_cast<int64_t>(xs.size()), spec, rng);
    benchmark::DoNotOptimize(c.codes.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Quantize)->Arg(1 << 16)->Arg(1 << 20);

void BM_EffectiveRank(benchmark::State& state) {
  ParamSet delta = gaussian_delta(state.range(0), state.range(0), 5);
  for (auto _ : state) {
    EffectiveRank er = effective_rank(delta, 0.5, 128);
    benchmark::DoNotOptimize(er.aggregate);
  }
}
BENCHMARK(BM_EffectiveRank)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_SerializeRoundTrip(benchmark::State& state) {
  ParamSet delta = gaussian_delta(512, 768, 6);
  QuantSpec spec;
  RngStream rng(9, 9);
  CompressResult res = compress(delta, 64, spec, nullptr, 2, rng);
  for (auto _ : state) {
    std::vector<uint8_t> bytes = serialize(res.delta);
    CompressedDelta back = parse_compressed(bytes);
    benchmark::DoNotOptimize(back.payload_bits);
  }
}
BENCHMARK(BM_SerializeRoundTrip)->Unit(benchmark::kMillisecond);

}  // namespace
