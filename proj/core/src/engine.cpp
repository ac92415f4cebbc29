#include "dilocox/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>

#include <json.hpp>

namespace dilocox {

using json = nlohmann::json;

Mode mode_from_string(const std::string& s) {
  if (s == "allreduce-per-step") return Mode::AllReducePerStep;
  if (s == "diloco-sync") return Mode::DilocoSync;
  if (s == "dilocox") return Mode::Dilocox;
  if (s == "dilocox-no-overlap") return Mode::DilocoxNoOverlap;
  if (s == "dilocox-no-compress") return Mode::DilocoxNoCompress;
  throw ValidationError("unknown mode: " + s);
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::AllReducePerStep: return "allreduce-per-step";
    case Mode::DilocoSync: return "diloco-sync";
    case Mode::Dilocox: return "dilocox";
    case Mode::DilocoxNoOverlap: return "dilocox-no-overlap";
    case Mode::DilocoxNoCompress: return "dilocox-no-compress";
  }
  return "?";
}

std::vector<Mode> all_modes() {
  return {Mode::AllReducePerStep, Mode::DilocoSync, Mode::Dilocox, Mode::DilocoxNoOverlap,
          Mode::DilocoxNoCompress};
}

bool EngineConfig::overlap() const {
  if (force_overlap.has_value()) return *force_overlap;
  return mode == Mode::Dilocox || mode == Mode::DilocoxNoCompress;
}

bool EngineConfig::compress_enabled() const {
  if (force_compress.has_value()) return *force_compress;
  return mode == Mode::Dilocox || mode == Mode::DilocoxNoOverlap;
}

bool EngineConfig::adaptive_enabled() const { return compress_enabled() && schedule.adaptive; }

int EngineConfig::resolved_threads() const {
  if (threads > 0) return threads;
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, std::min(D, hw > 0 ? hw : 1));
}

void EngineConfig::validate() const {
  if (D < 1) throw ValidationError("config: D must be >= 1");
  if (M < 1) throw ValidationError("config: M must be >= 1");
  if (total_inner_steps < 1) throw ValidationError("config: total_inner_steps must be >= 1");
  if (batch < 1) throw ValidationError("config: batch must be >= 1");
  if (eval_windows < 1) throw ValidationError("config: eval_windows must be >= 1");
  if (schedule.H1 < 1) throw ValidationError("config: H1 must be >= 1");
  if (schedule.window_c < 1) throw ValidationError("config: rank window c must be >= 1");
  if (!(schedule.tau > 0.0) || !(schedule.tau < 1.0))
    throw ValidationError("config: tau must be in (0, 1)");
  if (compression.rank1 < 1) throw ValidationError("config: r1 must be >= 1");
  if (compression.power_iters < 1) throw ValidationError("config: power_iters must be >= 1");
  compression.quant.validate();
  model.validate();
  net.validate();
  if (M > model.dense_layers()) throw ValidationError("config: M exceeds the model layer count");
  if (outer_step_epsilon_s < 0) throw ValidationError("config: outer step epsilon must be >= 0");
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

std::string jsonl_line(const RoundRecord& r) {
  json j{{"round", r.round},
         {"inner_steps", r.inner_steps},
         {"train_loss", r.train_loss},
         {"eval_loss", r.eval_loss},
         {"r_t", r.r_t},
         {"H_t", r.H_t},
         {"r_prime", r.r_prime},
         {"payload_bytes", r.payload_bytes},
         {"inter_bytes", r.inter_bytes},
         {"intra_bytes", r.intra_bytes},
         {"compute_s", r.compute_s},
         {"comm_s", r.comm_s},
         {"idle_s", r.idle_s},
         {"round_s", r.round_s},
         {"clock_s", r.clock_s},
         {"err_buf_norm", r.err_buf_norm},
         {"comp_error", r.comp_error},
         {"omega_sq", r.omega_sq},
         {"bound_violated", r.bound_violated},
         {"drift_ratio", r.drift_ratio}};
  return j.dump();
}

void write_metrics_jsonl(const MetricsLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics log: " + path);
  for (const RoundRecord& r : log.rounds) out << jsonl_line(r) << "\n";
  if (!out) throw IoError("error writing metrics log: " + path);
}

void write_summary_csv(const MetricsLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write summary csv: " + path);
  out << "round,inner_steps,train_loss,eval_loss,r_t,H_t,r_prime,payload_bytes,inter_bytes,"
         "intra_bytes,compute_s,comm_s,idle_s,round_s,clock_s,err_buf_norm,comp_error,omega_sq,"
         "bound_violated,drift_ratio\n";
  for (const RoundRecord& r : log.rounds) {
    out << r.round << ',' << r.inner_steps << ',' << r.train_loss << ',' << r.eval_loss << ','
        << r.r_t << ',' << r.H_t << ',' << r.r_prime << ',' << r.payload_bytes << ','
        << r.inter_bytes << ',' << r.intra_bytes << ',' << r.compute_s << ',' << r.comm_s << ','
        << r.idle_s << ',' << r.round_s << ',' << r.clock_s << ',' << r.err_buf_norm << ','
        << r.comp_error << ',' << r.omega_sq << ',' << (r.bound_violated ? 1 : 0) << ','
        << r.drift_ratio << "\n";
  }
  if (!out) throw IoError("error writing summary csv: " + path);
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

namespace {

void parallel_over(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Per-node ring traffic inside each cluster (replica i lives on cluster i % C).
double intra_reduce_bytes(double payload_bytes, int d, int clusters) {
  double total = 0.0;
  for (int c = 0; c < clusters; ++c) {
    int members = 0;
    for (int i = c; i < d; i += clusters) ++members;
    if (members > 1) total += ring_volume(payload_bytes, members);
  }
  return total;
}

double round_comm_seconds(double payload_bytes, const EngineConfig& cfg) {
  if (payload_bytes <= 0) return 0.0;
  double t = comm_time(ring_volume(payload_bytes, cfg.net.clusters), cfg.net);
  // One latency term per stage group's collective.
  t += static_cast<double>(cfg.M - 1) * 2.0 * static_cast<double>(cfg.net.clusters - 1) *
       cfg.net.latency_s;
  return t;
}

struct TrainOutcome {
  ParamSet local;
  double last_loss = 0;
  double grad_sq_sum = 0;  // worker-0 diagnostic
  double boundary_bytes = 0;
};

TrainOutcome train_replica(const EngineConfig& cfg, const StagePlan& plan, const ParamSet& start,
                           ReplicaState& rep, int64_t steps, bool want_grad_norm) {
  TrainOutcome out;
  out.local = start;
  for (int64_t s = 0; s < steps; ++s) {
    Batch batch = next_batch(rep.shard, rep.data_rng, cfg.batch, cfg.model.seq_len);
    PipelineResult pr = pipeline_forward_backward(cfg.model, out.local, plan, batch);
    ParamSet grads = merge_stage_grads(out.local, pr.stage_grads);
    for (int64_t b : pr.boundary_forward_bytes) out.boundary_bytes += 2.0 * static_cast<double>(b);
    if (want_grad_norm) {
      const double n = ps_l2_norm(grads);
      out.grad_sq_sum += n * n;
    }
    adamw_step(rep.opt, out.local, grads);
    out.last_loss = pr.loss;
  }
  return out;
}

struct CollectiveOutcome {
  ParamSet average;           // the averaged pseudo-gradient
  double payload_bytes = 0;   // per-worker payload
  double comp_error = 0;      // worker 0
  double omega_sq = 0;
  int r_prime = 0;
  std::map<std::string, Tensor> warm_q;  // worker-0 float factors
};

// Compress every worker's staged delta (shared rng so the factor subspaces
// align), average, and refresh each worker's error buffer e = delta - avg.
CollectiveOutcome collective_average(RoundState& state, const EngineConfig& cfg,
                                     int64_t round_index) {
  const int d = cfg.D;
  std::vector<CompressedDelta> payloads(static_cast<size_t>(d));
  std::vector<std::map<std::string, Tensor>> factors(static_cast<size_t>(d));
  const bool compressed = cfg.compress_enabled();
  const int rank = state.r_t;

  parallel_over(d, cfg.resolved_threads(), [&](int i) {
    ReplicaState& rep = state.replicas[static_cast<size_t>(i)];
    if (compressed) {
      RngStream rng(cfg.seed, stream_key({0xc09c, static_cast<uint64_t>(round_index)}));
      CompressResult res = compress(rep.delta_pending, rank, cfg.compression.quant, &state.warm,
                                    cfg.compression.power_iters, rng);
      payloads[static_cast<size_t>(i)] = std::move(res.delta);
      factors[static_cast<size_t>(i)] = std::move(res.q_factors);
    } else {
      payloads[static_cast<size_t>(i)] = compress_raw(rep.delta_pending);
    }
  });

  CollectiveOutcome out;
  out.payload_bytes = payloads[0].payload_bytes();
  out.average = allreduce_avg(payloads);
  out.comp_error = measure_error(state.replicas[0].delta_pending, payloads[0]);
  if (compressed) {
    out.warm_q = std::move(factors[0]);
    // Size-weighted per-tensor bound with d = min(a, b).
    double weighted = 0.0;
    int64_t weight = 0;
    for (const TensorPayload& t : payloads[0].tensors) {
      if (t.kind != PayloadKind::LowRankQuant) continue;
      const int dmin = static_cast<int>(std::min(t.shape[0], t.shape[1]));
      const int64_t sz = t.shape[0] * t.shape[1];
      weighted += static_cast<double>(sz) * omega_bound(t.rank, dmin, t.qbits);
      weight += sz;
    }
    out.omega_sq = weight > 0 ? weighted / static_cast<double>(weight) : 0.0;
  }
  for (int i = 0; i < d; ++i) {
    ReplicaState& rep = state.replicas[static_cast<size_t>(i)];
    rep.error = ps_sub(rep.delta_pending, out.average);
  }
  if (cfg.adaptive_enabled()) {
    EffectiveRank er = effective_rank(out.average, cfg.schedule.tau, cfg.compression.rank1);
    out.r_prime = er.aggregate;
  }
  return out;
}

// Stage the new pseudo-gradient delta = (anchor - local) + e per replica.
void stage_deltas(RoundState& state, const EngineConfig& cfg) {
  for (int i = 0; i < cfg.D; ++i) {
    ReplicaState& rep = state.replicas[static_cast<size_t>(i)];
    ParamSet delta = ps_sub(state.anchor, rep.local);
    ps_add(delta, rep.error);
    const double n = ps_l2_norm(delta);
    state.max_delta_norm = std::max(state.max_delta_norm, n);
    rep.delta_pending = std::move(delta);
  }
  state.has_pending = true;
}

void push_rank_window(RoundState& state, const EngineConfig& cfg, int r_prime) {
  state.rank_window.push_back(r_prime);
  const size_t c = static_cast<size_t>(cfg.schedule.window_c);
  if (state.rank_window.size() > c)
    state.rank_window.erase(state.rank_window.begin(),
                            state.rank_window.end() - static_cast<ptrdiff_t>(c));
}

double mean_train_loss(const std::vector<TrainOutcome>& outcomes) {
  double s = 0.0;
  for (const TrainOutcome& o : outcomes) s += o.last_loss;
  return s / static_cast<double>(outcomes.size());
}

}  // namespace

std::pair<int, int> adapt_compression(const std::vector<int>& window, int r1, int H1, int c,
                                      int h_min) {
  if (r1 < 1 || H1 < 1 || c < 1) throw ValidationError("adapt_compression: bad parameters");
  if (h_min < 1) throw ValidationError("adapt_compression: H_min must be >= 1");
  if (static_cast<int>(window.size()) < c) return {r1, H1};
  double sum = 0.0;
  for (size_t i = window.size() - static_cast<size_t>(c); i < window.size(); ++i)
    sum += static_cast<double>(window[i]);
  int r_t = static_cast<int>(std::ceil(sum / static_cast<double>(c)));
  r_t = std::clamp(r_t, 1, r1);
  const double alpha = static_cast<double>(r1 - r_t) / static_cast<double>(r1);
  int h_t = static_cast<int>(std::llround(static_cast<double>(H1) * alpha));
  h_t = std::clamp(h_t, h_min, H1);
  return {r_t, h_t};
}

double eval_loss(const ModelSpec& spec, const ParamSet& params, const Dataset& heldout,
                 int windows) {
  Batch b = fixed_eval_batch(heldout, windows, spec.seq_len);
  return forward_loss(spec, params, b);
}

RoundState init_round_state(const EngineConfig& cfg, const Dataset& full, double eval_fraction) {
  cfg.validate();
  if (cfg.model.kind == ModelKind::CharLm && full.kind != DataKind::CharCorpus)
    throw ValidationError("char-lm model needs a char-corpus dataset");
  if (cfg.model.kind == ModelKind::Mlp && full.kind == DataKind::CharCorpus)
    throw ValidationError("mlp model needs a synthetic dataset");
  if (cfg.model.kind == ModelKind::CharLm && cfg.model.vocab_size != full.vocab_size)
    throw ValidationError("model vocab_size does not match the dataset");

  RoundState state;
  auto [train, eval] = split_train_eval(full, eval_fraction);
  state.eval = std::move(eval);
  state.plan = partition_stages(cfg.model, cfg.M);
  state.anchor = build_model(cfg.model, cfg.seed);
  state.outer = make_nesterov_state(state.anchor, cfg.outer_opt);
  state.r_t = cfg.compression.rank1;
  state.H_t = cfg.schedule.H1;
  state.warm.rank = 0;

  state.replicas.resize(static_cast<size_t>(cfg.D));
  for (int i = 0; i < cfg.D; ++i) {
    ReplicaState& rep = state.replicas[static_cast<size_t>(i)];
    rep.shard = shard(train, cfg.D, i);
    if (cfg.model.kind == ModelKind::CharLm && rep.shard.length() <= cfg.model.seq_len)
      throw ValidationError("shard too small for the configured seq_len");
    rep.opt = make_adamw_state(state.anchor, cfg.inner_opt);
    rep.error = ParamSet::zeros_like(state.anchor);
    rep.local = state.anchor;
    rep.data_rng = RngStream(cfg.seed, stream_key({0xda7a, static_cast<uint64_t>(i)}));
  }
  return state;
}

namespace {

RoundRecord finish_record(RoundState& state, const EngineConfig& cfg, int64_t h_used,
                          double train_loss, double payload_bytes, double comm_s,
                          double activation_bytes, bool overlapped, const CollectiveOutcome* col,
                          double drift_ratio) {
  RoundRecord rec;
  rec.round = state.round;
  rec.inner_steps = h_used;
  rec.train_loss = train_loss;
  rec.eval_loss = state.eval.length() > 0
                      ? eval_loss(cfg.model, state.anchor, state.eval, cfg.eval_windows)
                      : 0.0;
  rec.r_t = cfg.compress_enabled() ? state.r_t : 0;
  rec.H_t = static_cast<int>(h_used);
  rec.payload_bytes = payload_bytes;
  const double inter = payload_bytes > 0 ? ring_volume(payload_bytes, cfg.net.clusters) : 0.0;
  rec.inter_bytes = inter;
  rec.intra_bytes = activation_bytes +
                    (payload_bytes > 0 ? intra_reduce_bytes(payload_bytes, cfg.D, cfg.net.clusters) : 0.0);
  rec.compute_s = static_cast<double>(h_used) * cfg.net.t_step_s;
  rec.comm_s = comm_s;
  if (overlapped) {
    rec.round_s = std::max(rec.compute_s, rec.comm_s) + cfg.outer_step_epsilon_s;
    rec.idle_s = std::max(0.0, rec.comm_s - rec.compute_s);
  } else {
    rec.round_s = rec.compute_s + rec.comm_s + cfg.outer_step_epsilon_s;
    rec.idle_s = rec.comm_s;
  }
  // Intra-cluster traffic is unpriced unless a sensitivity bandwidth is set.
  if (cfg.net.intra_bandwidth_bps > 0)
    rec.round_s += rec.intra_bytes * 8.0 / cfg.net.intra_bandwidth_bps;
  state.clock_s += rec.round_s;
  state.cum_payload_bytes += payload_bytes;
  state.cum_inter_bytes += inter;
  state.cum_intra_bytes += rec.intra_bytes;
  rec.clock_s = state.clock_s;
  rec.err_buf_norm = ps_l2_norm(state.replicas[0].error);
  if (col != nullptr) {
    rec.comp_error = col->comp_error;
    rec.omega_sq = col->omega_sq;
    rec.bound_violated = col->omega_sq > 0 && col->comp_error > col->omega_sq;
    rec.r_prime = col->r_prime;
  }
  rec.drift_ratio = drift_ratio;
  return rec;
}

std::vector<TrainOutcome> train_all(RoundState& state, const EngineConfig& cfg, int64_t h_used,
                                    double* intra_bytes, double* drift_ratio) {
  std::vector<TrainOutcome> outcomes(static_cast<size_t>(cfg.D));
  parallel_over(cfg.D, cfg.resolved_threads(), [&](int i) {
    ReplicaState& rep = state.replicas[static_cast<size_t>(i)];
    const ParamSet& start = cfg.continue_from_local && state.round > 0 ? rep.local : state.anchor;
    outcomes[static_cast<size_t>(i)] = train_replica(cfg, state.plan, start, rep, h_used, i == 0);
  });
  for (int i = 0; i < cfg.D; ++i) {
    ReplicaState& rep = state.replicas[static_cast<size_t>(i)];
    rep.local = std::move(outcomes[static_cast<size_t>(i)].local);
    *intra_bytes += outcomes[static_cast<size_t>(i)].boundary_bytes;
  }
  // Local-drift diagnostic for worker 0: ||theta_H - theta_0||^2 over the
  // envelope lr^2 H^2 mean||g||^2.
  ParamSet drift = ps_sub(state.replicas[0].local, state.anchor);
  const double dn = ps_l2_norm(drift);
  const double g2 = outcomes[0].grad_sq_sum / std::max<double>(1.0, static_cast<double>(h_used));
  const double denom = static_cast<double>(cfg.inner_opt.lr) * static_cast<double>(cfg.inner_opt.lr) *
                       static_cast<double>(h_used) * static_cast<double>(h_used) * g2;
  *drift_ratio = denom > 0 ? (dn * dn) / denom : 0.0;
  return outcomes;
}

}  // namespace

RoundRecord run_round_sync(RoundState& state, const EngineConfig& cfg) {
  const int64_t remaining = cfg.total_inner_steps - state.steps_done;
  const int64_t h_used = std::min<int64_t>(state.H_t, remaining);
  if (h_used < 1) throw ValidationError("run_round_sync: no steps remaining");
  state.round += 1;

  double intra = 0.0, drift_ratio = 0.0;
  std::vector<TrainOutcome> outcomes = train_all(state, cfg, h_used, &intra, &drift_ratio);
  state.steps_done += h_used;

  // Fresh pseudo-gradients, averaged and applied in the same round.
  stage_deltas(state, cfg);
  CollectiveOutcome col = collective_average(state, cfg, state.round);
  int r_next = state.r_t, h_next = state.H_t;
  if (cfg.adaptive_enabled()) {
    push_rank_window(state, cfg, col.r_prime);
    std::tie(r_next, h_next) =
        adapt_compression(state.rank_window, cfg.compression.rank1, cfg.schedule.H1,
                          cfg.schedule.window_c, cfg.schedule.resolved_H_min());
  }
  if (cfg.compress_enabled() && !col.warm_q.empty()) {
    state.warm.rank = state.r_t;
    state.warm.q_factors = std::move(col.warm_q);
  }
  nesterov_outer_step(state.outer, state.anchor, col.average);
  state.has_pending = false;

  const double comm_s = round_comm_seconds(col.payload_bytes, cfg);
  RoundRecord rec = finish_record(state, cfg, h_used, mean_train_loss(outcomes), col.payload_bytes,
                                  comm_s, intra, /*overlapped=*/false, &col, drift_ratio);
  state.r_t = r_next;
  state.H_t = h_next;
  return rec;
}

RoundRecord run_round_overlapped(RoundState& state, const EngineConfig& cfg) {
  const int64_t remaining = cfg.total_inner_steps - state.steps_done;
  const int64_t h_used = std::min<int64_t>(state.H_t, remaining);
  if (h_used < 1) throw ValidationError("run_round_overlapped: no steps remaining");
  state.round += 1;

  // (1) Local training of this round from the current anchor; (2) the
  // collective for the previous round's deltas runs concurrently in virtual
  // time. Sequential execution realizes the same semantics.
  double intra = 0.0, drift_ratio = 0.0;
  std::vector<TrainOutcome> outcomes = train_all(state, cfg, h_used, &intra, &drift_ratio);
  state.steps_done += h_used;

  bool averaged = false;
  CollectiveOutcome col;
  if (state.has_pending) {
    col = collective_average(state, cfg, state.round);
    averaged = true;
    if (cfg.adaptive_enabled()) {
      push_rank_window(state, cfg, col.r_prime);
    }
  }

  // (3) controller output applies from the next round on.
  int r_next = state.r_t, h_next = state.H_t;
  if (cfg.adaptive_enabled()) {
    std::tie(r_next, h_next) =
        adapt_compression(state.rank_window, cfg.compression.rank1, cfg.schedule.H1,
                          cfg.schedule.window_c, cfg.schedule.resolved_H_min());
  }

  // (4) stage this round's pseudo-gradients against the starting anchor.
  stage_deltas(state, cfg);

  // (5) one-step-delayed outer update.
  double comm_s = 0.0, payload = 0.0;
  if (averaged) {
    nesterov_outer_step(state.outer, state.anchor, col.average);
    payload = col.payload_bytes;
    comm_s = round_comm_seconds(payload, cfg);
    if (cfg.compress_enabled() && !col.warm_q.empty()) {
      state.warm.rank = state.r_t;
      state.warm.q_factors = std::move(col.warm_q);
    }
  }

  RoundRecord rec = finish_record(state, cfg, h_used, mean_train_loss(outcomes), payload, comm_s,
                                  intra, /*overlapped=*/true, averaged ? &col : nullptr, drift_ratio);
  state.r_t = r_next;
  state.H_t = h_next;
  return rec;
}

// ---------------------------------------------------------------------------
// per-step all-reduce baseline
// ---------------------------------------------------------------------------

namespace {

ExperimentResult run_allreduce_per_step(const EngineConfig& cfg, const Dataset& full,
                                        double eval_fraction) {
  RoundState state = init_round_state(cfg, full, eval_fraction);
  ParamSet params = state.anchor;
  AdamWState opt = make_adamw_state(params, cfg.inner_opt);

  const double grad_payload = static_cast<double>(params.total_params()) * 4.0;
  const double inter_per_step = ring_volume(grad_payload, cfg.net.clusters);
  const double comm_per_step = round_comm_seconds(grad_payload, cfg);
  const double intra_per_step = intra_reduce_bytes(grad_payload, cfg.D, cfg.net.clusters);

  ExperimentResult out;
  std::vector<double> losses(static_cast<size_t>(cfg.D), 0.0);
  std::vector<ParamSet> grads(static_cast<size_t>(cfg.D));
  const int64_t record_every = cfg.schedule.H1;
  int64_t steps_in_block = 0;
  double block_loss = 0.0;

  while (state.steps_done < cfg.total_inner_steps) {
    parallel_over(cfg.D, cfg.resolved_threads(), [&](int i) {
      ReplicaState& rep = state.replicas[static_cast<size_t>(i)];
      Batch batch = next_batch(rep.shard, rep.data_rng, cfg.batch, cfg.model.seq_len);
      PipelineResult pr = pipeline_forward_backward(cfg.model, params, state.plan, batch);
      grads[static_cast<size_t>(i)] = merge_stage_grads(params, pr.stage_grads);
      losses[static_cast<size_t>(i)] = pr.loss;
    });
    // Canonical mean in worker order (double accumulation) matches the
    // collective used by the round modes.
    ParamSet mean = ParamSet::zeros_like(params);
    for (int t = 0; t < mean.count(); ++t) {
      std::vector<double> acc(static_cast<size_t>(mean.tensor(t).size()), 0.0);
      for (int i = 0; i < cfg.D; ++i) {
        const float* src = grads[static_cast<size_t>(i)].tensor(t).data();
        for (size_t k = 0; k < acc.size(); ++k) acc[k] += static_cast<double>(src[k]);
      }
      float* dst = mean.tensor(t).data();
      const double inv = 1.0 / static_cast<double>(cfg.D);
      for (size_t k = 0; k < acc.size(); ++k) dst[k] = static_cast<float>(acc[k] * inv);
    }
    adamw_step(opt, params, mean);

    state.steps_done += 1;
    state.clock_s += cfg.net.t_step_s + comm_per_step;
    state.cum_payload_bytes += grad_payload;
    state.cum_inter_bytes += inter_per_step;
    state.cum_intra_bytes += intra_per_step;
    steps_in_block += 1;
    for (int i = 0; i < cfg.D; ++i) block_loss += losses[static_cast<size_t>(i)];

    if (state.steps_done % record_every == 0 || state.steps_done == cfg.total_inner_steps) {
      state.round += 1;
      RoundRecord rec;
      rec.round = state.round;
      rec.inner_steps = steps_in_block;
      rec.train_loss = block_loss / static_cast<double>(steps_in_block * cfg.D);
      rec.eval_loss =
          state.eval.length() > 0 ? eval_loss(cfg.model, params, state.eval, cfg.eval_windows) : 0.0;
      rec.r_t = 0;
      rec.H_t = 1;
      rec.payload_bytes = grad_payload * static_cast<double>(steps_in_block);
      rec.inter_bytes = inter_per_step * static_cast<double>(steps_in_block);
      rec.intra_bytes = intra_per_step * static_cast<double>(steps_in_block);
      rec.compute_s = static_cast<double>(steps_in_block) * cfg.net.t_step_s;
      rec.comm_s = comm_per_step * static_cast<double>(steps_in_block);
      rec.idle_s = rec.comm_s;
      rec.round_s = rec.compute_s + rec.comm_s;
      rec.clock_s = state.clock_s;
      out.log.rounds.push_back(rec);
      steps_in_block = 0;
      block_loss = 0.0;
    }
  }
  out.final_params = std::move(params);
  return out;
}

}  // namespace

ExperimentResult run_experiment(const EngineConfig& cfg, const Dataset& full,
                                double eval_fraction) {
  cfg.validate();
  if (cfg.per_step_allreduce()) return run_allreduce_per_step(cfg, full, eval_fraction);

  RoundState state = init_round_state(cfg, full, eval_fraction);
  ExperimentResult out;
  const bool overlapped = cfg.overlap();
  while (state.steps_done < cfg.total_inner_steps) {
    RoundRecord rec =
        overlapped ? run_round_overlapped(state, cfg) : run_round_sync(state, cfg);
    out.log.rounds.push_back(rec);
  }
  out.final_params = std::move(state.anchor);
  return out;
}

std::vector<CompareRow> run_compare(const EngineConfig& base, const Dataset& full,
                                    double eval_fraction) {
  std::vector<CompareRow> rows;
  for (Mode m : all_modes()) {
    EngineConfig cfg = base;
    cfg.mode = m;
    ExperimentResult res = run_experiment(cfg, full, eval_fraction);
    CompareRow row;
    row.mode = m;
    int64_t steps = 0;
    double tokens = 0;
    for (const RoundRecord& r : res.log.rounds) {
      steps += r.inner_steps;
      row.total_inter_bytes += r.inter_bytes;
      row.total_payload_bytes += r.payload_bytes;
    }
    tokens = static_cast<double>(steps) * cfg.batch *
             (cfg.model.kind == ModelKind::CharLm ? cfg.model.seq_len : 1) * cfg.D;
    row.total_inner_steps = steps;
    row.sim_time_s = res.log.rounds.empty() ? 0.0 : res.log.rounds.back().clock_s;
    row.final_eval_loss = res.log.rounds.empty() ? 0.0 : res.log.rounds.back().eval_loss;
    row.tokens_per_s = row.sim_time_s > 0 ? tokens / row.sim_time_s : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out =
      "mode,final_eval_loss,total_inter_bytes,total_payload_bytes,sim_time_s,tokens_per_s,"
      "total_inner_steps\n";
  for (const CompareRow& r : rows) {
    out += to_string(r.mode);
    out += ',' + std::to_string(r.final_eval_loss);
    out += ',' + std::to_string(r.total_inter_bytes);
    out += ',' + std::to_string(r.total_payload_bytes);
    out += ',' + std::to_string(r.sim_time_s);
    out += ',' + std::to_string(r.tokens_per_s);
    out += ',' + std::to_string(r.total_inner_steps);
    out += '\n';
  }
  return out;
}

}  // namespace dilocox
