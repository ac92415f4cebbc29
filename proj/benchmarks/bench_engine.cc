#include <benchmark/benchmark.h>

#include "dilocox/engine.hpp"

using namespace dilocox;

namespace {

// End-to-end round cost on a small char-LM, the unit the simulator scales by.
void BM_TrainingRound(benchmark::State& state) {
  Dataset data = corpus_from_bytes(demo_corpus_bytes(65536, 11));
  EngineConfig cfg;
  cfg.model = char_lm_spec(data.vocab_size, 8, 8, {128, 128});
  cfg.D = static_cast<int>(state.range(0));
  cfg.net.clusters = 2;
  cfg.batch = 4;
  cfg.schedule.H1 = 8;
  cfg.total_inner_steps = 1 << 30;  // bounded by rounds below
  cfg.compression.rank1 = 16;
  cfg.threads = static_cast<int>(state.range(1));
  cfg.seed = 3;

  RoundState st = init_round_state(cfg, data, 0.05);
  for (auto _ : state) {
    RoundRecord rec = run_round_overlapped(st, cfg);
    benchmark::DoNotOptimize(rec.train_loss);
  }
  state.SetItemsProcessed(state.iterations() * cfg.schedule.H1 * cfg.D);
}
BENCHMARK(BM_TrainingRound)->Args({2, 1})->Args({2, 2})->Args({4, 2})->Unit(benchmark::kMillisecond);

void BM_AllreduceAvg(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  std::vector<CompressedDelta> payloads;
  QuantSpec spec;
  for (int i = 0; i < d; ++i) {
    RngStream rng(static_cast<uint64_t>(i), 1);
    ParamSet ps;
    ps.add("w", Tensor::gaussian({256, 256}, rng));
    RngStream crng(5, 5);
    payloads.push_back(compress(ps, 32, spec, nullptr, 2, crng).delta);
  }
  for (auto _ : state) {
    ParamSet avg = allreduce_avg(payloads);
    benchmark::DoNotOptimize(avg.count());
  }
}
BENCHMARK(BM_AllreduceAvg)->Arg(2)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace
