#include <doctest.h>

#include <cmath>

#include "dilocox/engine.hpp"
#include "test_support.hpp"

using namespace dilocox;

TEST_SUITE_BEGIN("engine");

TEST_CASE("adapt_compression holds the defaults until the window fills") {
  auto [r, h] = adapt_compression({2048, 1024}, 2048, 125, 5, 13);
  CHECK(r == 2048);
  CHECK(h == 125);
}

TEST_CASE("adapt_compression worked window example") {
  auto [r, h] = adapt_compression({2048, 1024, 512, 512, 512}, 2048, 125, 5, 13);
  CHECK(r == 922);  // ceil(4608 / 5)
  CHECK(h == 69);   // round(125 * (2048 - 922) / 2048)
}

TEST_CASE("adapt_compression clamps a zero alpha to H_min") {
  auto [r, h] = adapt_compression({64, 64, 64}, 64, 120, 3, 12);
  CHECK(r == 64);
  CHECK(h == 12);
  auto [r2, h2] = adapt_compression({1, 1, 1}, 64, 120, 3, 12);
  CHECK(r2 == 1);
  CHECK(h2 == 118);  // round(120 * 63/64)
}

TEST_CASE("sync round with D=1, no compression, gamma=1 beta=0 lands on the local params") {
  auto s = testsup::small_char_setup(3, /*d=*/1, /*h1=*/3, /*steps=*/3);
  s.cfg.mode = Mode::DilocoSync;
  s.cfg.outer_opt.lr = 1.0f;
  s.cfg.outer_opt.momentum = 0.0f;
  // Bit-exact recovery of the local params requires every |delta| to stay
  // under its coordinate's magnitude (fl(a - fl(a-b)) = b needs Sterbenz-
  // style alignment), so the drift is kept small next to the init scale.
  s.cfg.inner_opt.lr = 1e-5f;
  s.cfg.inner_opt.weight_decay = 0.0f;
  RoundState state = init_round_state(s.cfg, s.data, 0.05);
  run_round_sync(state, s.cfg);
  CHECK(ps_equal_bits(state.anchor, state.replicas[0].local));
  // Error buffer stays exactly zero: delta was transmitted raw and D = 1.
  CHECK(ps_l2_norm(state.replicas[0].error) == 0.0);
}

TEST_CASE("sync round at full learning rate recovers locals to one ulp of the delta") {
  auto s = testsup::small_char_setup(3, /*d=*/1, /*h1=*/3, /*steps=*/3);
  s.cfg.mode = Mode::DilocoSync;
  s.cfg.outer_opt.lr = 1.0f;
  s.cfg.outer_opt.momentum = 0.0f;
  RoundState state = init_round_state(s.cfg, s.data, 0.05);
  run_round_sync(state, s.cfg);
  // Coordinates whose value dips below the round drift can miss by one ulp
  // of the FP32 delta; everything else matches bitwise.
  int mismatched = 0;
  int64_t total = 0;
  for (int t = 0; t < state.anchor.count(); ++t) {
    const Tensor& a = state.anchor.tensor(t);
    const Tensor& b = state.replicas[0].local.tensor(t);
    const Tensor& d = state.replicas[0].delta_pending.tensor(t);
    for (int64_t k = 0; k < a.size(); ++k) {
      ++total;
      if (a[k] != b[k]) {
        ++mismatched;
        CHECK(std::fabs(static_cast<double>(a[k]) - b[k]) <=
              std::fabs(static_cast<double>(d[k])) * 1e-6);
      }
    }
  }
  CHECK(mismatched <= total / 100);
}

TEST_CASE("identical replicas produce identical deltas and a zero error buffer") {
  auto s = testsup::small_char_setup(5, /*d=*/2, /*h1=*/3, /*steps=*/3);
  s.cfg.mode = Mode::DilocoSync;
  RoundState state = init_round_state(s.cfg, s.data, 0.05);
  state.replicas[1].shard = state.replicas[0].shard;
  state.replicas[1].data_rng = state.replicas[0].data_rng;
  run_round_sync(state, s.cfg);
  CHECK(ps_equal_bits(state.replicas[0].delta_pending, state.replicas[1].delta_pending));
  // Delta equals the average, so e = delta - avg vanishes bitwise.
  CHECK(ps_l2_norm(state.replicas[0].error) == 0.0);
}

TEST_CASE("sync round averages two uncompressed deltas exactly") {
  auto s = testsup::small_char_setup(7, /*d=*/2, /*h1=*/2, /*steps=*/2);
  s.cfg.mode = Mode::DilocoSync;
  s.cfg.outer_opt.lr = 1.0f;
  s.cfg.outer_opt.momentum = 0.0f;
  RoundState state = init_round_state(s.cfg, s.data, 0.05);
  const ParamSet anchor0 = state.anchor;
  run_round_sync(state, s.cfg);
  // Reconstruct the average from the two staged deltas: gamma=1, beta=0 means
  // anchor' = anchor - mean(delta).
  for (int t = 0; t < state.anchor.count(); ++t) {
    for (int64_t k = 0; k < state.anchor.tensor(t).size(); ++k) {
      const double d0 = state.replicas[0].delta_pending.tensor(t)[k];
      const double d1 = state.replicas[1].delta_pending.tensor(t)[k];
      const float mean = static_cast<float>((d0 + d1) / 2.0);
      const float want = anchor0.tensor(t)[k] - mean;
      CHECK(state.anchor.tensor(t)[k] == want);
    }
  }
}

TEST_CASE("overlapped round 1 stages a delta but leaves the anchor alone") {
  auto s = testsup::small_char_setup(9, /*d=*/2, /*h1=*/4, /*steps=*/8);
  RoundState state = init_round_state(s.cfg, s.data, 0.05);
  const ParamSet anchor0 = state.anchor;
  RoundRecord rec = run_round_overlapped(state, s.cfg);
  CHECK(ps_equal_bits(state.anchor, anchor0));
  CHECK(state.has_pending);
  CHECK(rec.payload_bytes == 0.0);
  CHECK(rec.comm_s == 0.0);
  CHECK(rec.round_s == doctest::Approx(4 * s.cfg.net.t_step_s));
  CHECK(rec.idle_s == 0.0);
}

TEST_CASE("overlapped rounds hide communication that fits under compute") {
  auto s = testsup::small_char_setup(11, /*d=*/2, /*h1=*/4, /*steps=*/12);
  s.cfg.net.bandwidth_bps = 1e12;  // effectively instant
  RoundState state = init_round_state(s.cfg, s.data, 0.05);
  run_round_overlapped(state, s.cfg);
  RoundRecord rec = run_round_overlapped(state, s.cfg);
  CHECK(rec.comm_s > 0.0);
  CHECK(rec.comm_s < rec.compute_s);
  CHECK(rec.round_s == doctest::Approx(rec.compute_s));
  CHECK(rec.idle_s == 0.0);
}

TEST_CASE("overlapped trajectory equals the sequential reference bit for bit") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto s = testsup::small_char_setup(seed, /*d=*/3, /*h1=*/3, /*steps=*/18);
    s.cfg.threads = 2;  // engine may parallelize; result must not change
    ExperimentResult got = run_experiment(s.cfg, s.data, 0.05);
    testsup::ReferenceResult want = testsup::reference_overlapped_run(s.cfg, s.data, 0.05);
    CHECK(ps_equal_bits(got.final_params, want.anchor));
    REQUIRE(got.log.rounds.size() == want.train_losses.size());
    for (size_t i = 0; i < want.train_losses.size(); ++i)
      CHECK(got.log.rounds[i].train_loss == want.train_losses[i]);
  }
}

TEST_CASE("overlapped equivalence holds with pipeline stages and no compression") {
  auto s = testsup::small_char_setup(4, /*d=*/2, /*h1=*/2, /*steps=*/8);
  s.cfg.M = 2;
  s.cfg.mode = Mode::DilocoxNoCompress;
  s.cfg.threads = 2;
  ExperimentResult got = run_experiment(s.cfg, s.data, 0.05);
  testsup::ReferenceResult want = testsup::reference_overlapped_run(s.cfg, s.data, 0.05);
  CHECK(ps_equal_bits(got.final_params, want.anchor));
}

TEST_CASE("dilocox with compression and overlap forced off equals diloco-sync") {
  auto s = testsup::small_char_setup(13, /*d=*/2, /*h1=*/3, /*steps=*/9);
  EngineConfig forced = s.cfg;
  forced.mode = Mode::Dilocox;
  forced.force_overlap = false;
  forced.force_compress = false;
  EngineConfig sync = s.cfg;
  sync.mode = Mode::DilocoSync;

  ExperimentResult a = run_experiment(forced, s.data, 0.05);
  ExperimentResult b = run_experiment(sync, s.data, 0.05);
  CHECK(ps_equal_bits(a.final_params, b.final_params));
  REQUIRE(a.log.rounds.size() == b.log.rounds.size());
  for (size_t i = 0; i < a.log.rounds.size(); ++i) {
    CHECK(a.log.rounds[i].train_loss == b.log.rounds[i].train_loss);
    CHECK(a.log.rounds[i].eval_loss == b.log.rounds[i].eval_loss);
  }
}

TEST_CASE("allreduce-per-step with D=1 is plain single-worker AdamW") {
  auto s = testsup::small_char_setup(21, /*d=*/1, /*h1=*/4, /*steps=*/12);
  s.cfg.mode = Mode::AllReducePerStep;
  ExperimentResult got = run_experiment(s.cfg, s.data, 0.05);

  // Manual AdamW over the identical stream of batches.
  auto [train, eval] = split_train_eval(s.data, 0.05);
  (void)eval;
  Dataset sh = shard(train, 1, 0);
  ParamSet params = build_model(s.cfg.model, s.cfg.seed);
  AdamWState opt = make_adamw_state(params, s.cfg.inner_opt);
  RngStream rng(s.cfg.seed, stream_key({0xda7a, 0}));
  StagePlan plan = partition_stages(s.cfg.model, 1);
  for (int64_t i = 0; i < s.cfg.total_inner_steps; ++i) {
    Batch b = next_batch(sh, rng, s.cfg.batch, s.cfg.model.seq_len);
    PipelineResult pr = pipeline_forward_backward(s.cfg.model, params, plan, b);
    ParamSet g = merge_stage_grads(params, pr.stage_grads);
    adamw_step(opt, params, g);
  }
  CHECK(ps_equal_bits(got.final_params, params));
}

TEST_CASE("mode degeneracy: dilocox collapses to plain AdamW when nothing distributes") {
  // D=1, compression off, synchronous application, gamma=1 beta=0: the outer
  // step lands on the local params every round, so the trajectory is plain
  // uninterrupted AdamW. (With overlap on, the one-step delay genuinely
  // changes the trajectory, so it is forced off here.)
  auto s = testsup::small_char_setup(23, /*d=*/1, /*h1=*/3, /*steps=*/9);
  s.cfg.mode = Mode::Dilocox;
  s.cfg.force_compress = false;
  s.cfg.force_overlap = false;
  s.cfg.outer_opt.lr = 1.0f;
  s.cfg.outer_opt.momentum = 0.0f;
  s.cfg.inner_opt.lr = 1e-5f;
  s.cfg.inner_opt.weight_decay = 0.0f;
  ExperimentResult got = run_experiment(s.cfg, s.data, 0.05);

  auto [train, eval] = split_train_eval(s.data, 0.05);
  (void)eval;
  Dataset sh = shard(train, 1, 0);
  ParamSet params = build_model(s.cfg.model, s.cfg.seed);
  AdamWState opt = make_adamw_state(params, s.cfg.inner_opt);
  RngStream rng(s.cfg.seed, stream_key({0xda7a, 0}));
  StagePlan plan = partition_stages(s.cfg.model, 1);
  for (int64_t i = 0; i < s.cfg.total_inner_steps; ++i) {
    Batch b = next_batch(sh, rng, s.cfg.batch, s.cfg.model.seq_len);
    PipelineResult pr = pipeline_forward_backward(s.cfg.model, params, plan, b);
    ParamSet g = merge_stage_grads(params, pr.stage_grads);
    adamw_step(opt, params, g);
  }
  // Bias coordinates that wander below their own per-round drift can differ
  // in the last FP32 bit; everything else matches exactly.
  int mismatched = 0;
  for (int t = 0; t < params.count(); ++t)
    for (int64_t k = 0; k < params.tensor(t).size(); ++k) {
      const float a = got.final_params.tensor(t)[k];
      const float b = params.tensor(t)[k];
      if (a != b) {
        ++mismatched;
        CHECK(std::fabs(static_cast<double>(a) - b) <= 1e-10);
      }
    }
  CHECK(mismatched <= params.total_params() / 100);
}

TEST_CASE("byte accounting matches the ring formula recomputed from the log") {
  auto s = testsup::small_char_setup(31, /*d=*/2, /*h1=*/3, /*steps=*/12);
  ExperimentResult res = run_experiment(s.cfg, s.data, 0.05);
  for (const RoundRecord& r : res.log.rounds) {
    CHECK(r.inter_bytes == ring_volume(r.payload_bytes, s.cfg.net.clusters));
  }
}

TEST_CASE("virtual clock increases strictly across rounds") {
  auto s = testsup::small_char_setup(37, /*d=*/2, /*h1=*/2, /*steps=*/10);
  ExperimentResult res = run_experiment(s.cfg, s.data, 0.05);
  double prev = 0.0;
  for (const RoundRecord& r : res.log.rounds) {
    CHECK(r.clock_s > prev);
    prev = r.clock_s;
  }
}

TEST_CASE("eval_loss is deterministic, near ln(V) at init, and improves with training") {
  Dataset data = corpus_from_bytes(demo_corpus_bytes(16384, 7));
  EngineConfig cfg;
  cfg.model = char_lm_spec(data.vocab_size, 6, 8, {64, 64});
  cfg.D = 2;
  cfg.total_inner_steps = 400;
  cfg.schedule.H1 = 50;
  cfg.batch = 8;
  cfg.eval_windows = 64;
  cfg.compression.rank1 = 8;
  cfg.net.clusters = 2;
  cfg.seed = 5;
  // One-step delay tolerates only modest outer momentum at this scale.
  cfg.outer_opt.momentum = 0.3f;

  auto [train, eval] = split_train_eval(data, 0.1);
  (void)train;
  ParamSet init = build_model(cfg.model, cfg.seed);
  const double e1 = eval_loss(cfg.model, init, eval, 128);
  const double e2 = eval_loss(cfg.model, init, eval, 128);
  CHECK(e1 == e2);
  CHECK(std::fabs(e1 - std::log(data.vocab_size)) < 0.05 * std::log(data.vocab_size));

  ExperimentResult res = run_experiment(cfg, data, 0.1);
  const double after = eval_loss(cfg.model, res.final_params, eval, 128);
  CHECK(after < e1);
}

TEST_CASE("H_t and r_t stay inside their clamps over an adaptive run") {
  auto s = testsup::small_char_setup(41, /*d=*/2, /*h1=*/6, /*steps=*/60);
  s.cfg.schedule.window_c = 2;
  ExperimentResult res = run_experiment(s.cfg, s.data, 0.05);
  bool adapted = false;
  for (const RoundRecord& r : res.log.rounds) {
    CHECK(r.H_t >= 1);
    CHECK(r.H_t <= s.cfg.schedule.H1);
    CHECK(r.r_t >= 0);
    CHECK(r.r_t <= s.cfg.compression.rank1);
    adapted |= (r.r_prime > 0);
  }
  CHECK(adapted);
}

TEST_CASE("numeric divergence aborts with a NumericError") {
  Dataset data = make_synthetic_regression(64, 4, 2, 4, 3);
  EngineConfig cfg;
  // relu layers pass the blow-up through; tanh would saturate it away.
  cfg.model = mlp_spec({4, 8, 2}, Activation::Relu);
  cfg.inner_opt.lr = 1e18f;
  cfg.inner_opt.weight_decay = 0.0f;
  cfg.total_inner_steps = 40;
  cfg.schedule.H1 = 10;
  cfg.compression.rank1 = 2;
  cfg.batch = 4;
  CHECK_THROWS_AS(run_experiment(cfg, data, 0.1), NumericError);
}

TEST_CASE("error feedback telescopes over a compressed run") {
  auto s = testsup::small_char_setup(47, /*d=*/2, /*h1=*/2, /*steps=*/40);
  testsup::TelescopeResult res = testsup::telescoping_run(s.cfg, s.data, 20);
  CHECK(res.rel_gap < 1e-5);
  CHECK(res.final_err_norm <= 10.0 * res.max_delta_norm);
}

TEST_SUITE_END();
