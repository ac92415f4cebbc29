#pragma once

// Shared helpers for the unit and acceptance suites: independent oracles
// (naive GEMM, cyclic-Jacobi eigensolver) and small fixtures.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dilocox/data.hpp"
#include "dilocox/engine.hpp"
#include "dilocox/model.hpp"
#include "dilocox/tensor.hpp"

namespace testsup {

// Naive triple-loop GEMM with float64 accumulation, k ascending.
inline dilocox::Tensor naive_matmul(const dilocox::Tensor& a, const dilocox::Tensor& b) {
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  dilocox::Tensor c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p)
        acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
      c.at(i, j) = static_cast<float>(acc);
    }
  }
  return c;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

// Singular values via the Jacobi eigenvalues of the smaller Gram matrix.
inline std::vector<double> jacobi_singular_values(const dilocox::Tensor& m) {
  const int64_t a = m.rows(), b = m.cols();
  const int n = static_cast<int>(std::min(a, b));
  std::vector<double> gram(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      if (a <= b) {
        for (int64_t k = 0; k < b; ++k)
          s += static_cast<double>(m.at(i, k)) * static_cast<double>(m.at(j, k));
      } else {
        for (int64_t k = 0; k < a; ++k)
          s += static_cast<double>(m.at(k, i)) * static_cast<double>(m.at(k, j));
      }
      gram[static_cast<size_t>(i) * n + j] = s;
    }
  }
  std::vector<double> eig = jacobi_eigenvalues(std::move(gram), n);
  for (double& v : eig) v = std::sqrt(std::max(0.0, v));
  return eig;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  const std::filesystem::path p =
      std::filesystem::temp_directory_path() / ("dilocox_test_" + tag);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return path.string();
}

// Straight-line single-threaded re-implementation of the overlapped round
// semantics from library primitives; run_round_overlapped must match it bit
// for bit (the virtual clock is the only thing it does not model).
struct ReferenceResult {
  dilocox::ParamSet anchor;
  std::vector<double> train_losses;  // per round, mean over replicas of last step
};

inline ReferenceResult reference_overlapped_run(const dilocox::EngineConfig& cfg,
                                                const dilocox::Dataset& full,
                                                double eval_fraction) {
  using namespace dilocox;
  auto [train, eval] = split_train_eval(full, eval_fraction);
  (void)eval;
  StagePlan plan = partition_stages(cfg.model, cfg.M);
  ParamSet anchor = build_model(cfg.model, cfg.seed);
  NesterovState outer = make_nesterov_state(anchor, cfg.outer_opt);

  struct Rep {
    Dataset shard;
    AdamWState opt;
    ParamSet error;
    ParamSet pending;
    ParamSet local;
    RngStream rng{0, 0};
  };
  std::vector<Rep> reps(static_cast<size_t>(cfg.D));
  for (int i = 0; i < cfg.D; ++i) {
    reps[static_cast<size_t>(i)].shard = shard(train, cfg.D, i);
    reps[static_cast<size_t>(i)].opt = make_adamw_state(anchor, cfg.inner_opt);
    reps[static_cast<size_t>(i)].error = ParamSet::zeros_like(anchor);
    reps[static_cast<size_t>(i)].local = anchor;
    reps[static_cast<size_t>(i)].rng =
        RngStream(cfg.seed, stream_key({0xda7a, static_cast<uint64_t>(i)}));
  }

  WarmStart warm;
  std::vector<int> window;
  int r_t = cfg.compression.rank1;
  int h_t = cfg.schedule.H1;
  bool has_pending = false;
  int64_t steps = 0, round = 0;

  ReferenceResult out;
  while (steps < cfg.total_inner_steps) {
    ++round;
    const int64_t h_used = std::min<int64_t>(h_t, cfg.total_inner_steps - steps);
    double loss_sum = 0.0;
    for (int i = 0; i < cfg.D; ++i) {
      Rep& r = reps[static_cast<size_t>(i)];
      ParamSet local = cfg.continue_from_local && round > 1 ? r.local : anchor;
      double last = 0.0;
      for (int64_t s = 0; s < h_used; ++s) {
        Batch b = next_batch(r.shard, r.rng, cfg.batch, cfg.model.seq_len);
        PipelineResult pr = pipeline_forward_backward(cfg.model, local, plan, b);
        ParamSet g = merge_stage_grads(local, pr.stage_grads);
        adamw_step(r.opt, local, g);
        last = pr.loss;
      }
      r.local = std::move(local);
      loss_sum += last;
    }
    steps += h_used;
    out.train_losses.push_back(loss_sum / cfg.D);

    bool averaged = false;
    ParamSet delta_avg;
    std::map<std::string, Tensor> warm0;
    if (has_pending) {
      std::vector<CompressedDelta> payloads;
      for (int i = 0; i < cfg.D; ++i) {
        Rep& r = reps[static_cast<size_t>(i)];
        if (cfg.compress_enabled()) {
          RngStream crng(cfg.seed, stream_key({0xc09c, static_cast<uint64_t>(round)}));
          CompressResult res = compress(r.pending, r_t, cfg.compression.quant, &warm,
                                        cfg.compression.power_iters, crng);
          if (i == 0) warm0 = std::move(res.q_factors);
          payloads.push_back(std::move(res.delta));
        } else {
          payloads.push_back(compress_raw(r.pending));
        }
      }
      delta_avg = allreduce_avg(payloads);
      averaged = true;
      for (int i = 0; i < cfg.D; ++i)
        reps[static_cast<size_t>(i)].error = ps_sub(reps[static_cast<size_t>(i)].pending, delta_avg);
      if (cfg.adaptive_enabled()) {
        window.push_back(effective_rank(delta_avg, cfg.schedule.tau, cfg.compression.rank1).aggregate);
        if (static_cast<int>(window.size()) > cfg.schedule.window_c)
          window.erase(window.begin(), window.end() - cfg.schedule.window_c);
      }
    }

    int r_next = r_t, h_next = h_t;
    if (cfg.adaptive_enabled())
      std::tie(r_next, h_next) =
          adapt_compression(window, cfg.compression.rank1, cfg.schedule.H1, cfg.schedule.window_c,
                            cfg.schedule.resolved_H_min());

    for (int i = 0; i < cfg.D; ++i) {
      Rep& r = reps[static_cast<size_t>(i)];
      ParamSet d = ps_sub(anchor, r.local);
      ps_add(d, r.error);
      r.pending = std::move(d);
    }
    has_pending = true;

    if (averaged) {
      nesterov_outer_step(outer, anchor, delta_avg);
      if (cfg.compress_enabled() && !warm0.empty()) {
        warm.rank = r_t;
        warm.q_factors = std::move(warm0);
      }
    }
    r_t = r_next;
    h_t = h_next;
  }
  out.anchor = std::move(anchor);
  return out;
}

// Synchronous compressed training loop built from library primitives that
// tracks the error-feedback conservation identity sum(avg + e') = sum(delta)
// for worker 0.
struct TelescopeResult {
  double rel_gap = 0.0;
  double final_err_norm = 0.0;
  double max_delta_norm = 0.0;
  std::vector<double> err_norm_history;
};

inline TelescopeResult telescoping_run(const dilocox::EngineConfig& cfg,
                                       const dilocox::Dataset& full, int rounds) {
  using namespace dilocox;
  auto [train, eval] = split_train_eval(full, 0.05);
  (void)eval;
  StagePlan plan = partition_stages(cfg.model, cfg.M);
  ParamSet anchor = build_model(cfg.model, cfg.seed);
  NesterovState outer = make_nesterov_state(anchor, cfg.outer_opt);

  struct Rep {
    Dataset shard;
    AdamWState opt;
    ParamSet error;
    RngStream rng{0, 0};
  };
  std::vector<Rep> reps(static_cast<size_t>(cfg.D));
  for (int i = 0; i < cfg.D; ++i) {
    reps[static_cast<size_t>(i)].shard = shard(train, cfg.D, i);
    reps[static_cast<size_t>(i)].opt = make_adamw_state(anchor, cfg.inner_opt);
    reps[static_cast<size_t>(i)].error = ParamSet::zeros_like(anchor);
    reps[static_cast<size_t>(i)].rng =
        RngStream(cfg.seed, stream_key({0xda7a, static_cast<uint64_t>(i)}));
  }

  WarmStart warm;
  TelescopeResult out;
  ParamSet sum_delta = ParamSet::zeros_like(anchor);
  ParamSet sum_avg_plus_e = ParamSet::zeros_like(anchor);

  for (int t = 1; t <= rounds; ++t) {
    std::vector<ParamSet> deltas;
    for (int i = 0; i < cfg.D; ++i) {
      Rep& r = reps[static_cast<size_t>(i)];
      ParamSet local = anchor;
      for (int s = 0; s < cfg.schedule.H1; ++s) {
        Batch b = next_batch(r.shard, r.rng, cfg.batch, cfg.model.seq_len);
        ForwardBackwardResult fb = forward_backward(cfg.model, local, b);
        adamw_step(r.opt, local, fb.grads);
      }
      ParamSet d = ps_sub(anchor, local);
      ps_add(d, r.error);
      out.max_delta_norm = std::max(out.max_delta_norm, ps_l2_norm(d));
      deltas.push_back(std::move(d));
    }
    std::vector<CompressedDelta> payloads;
    std::map<std::string, Tensor> warm0;
    for (int i = 0; i < cfg.D; ++i) {
      RngStream crng(cfg.seed, stream_key({0xc09c, static_cast<uint64_t>(t)}));
      CompressResult res = compress(deltas[static_cast<size_t>(i)], cfg.compression.rank1,
                                    cfg.compression.quant, &warm, cfg.compression.power_iters,
                                    crng);
      if (i == 0) warm0 = std::move(res.q_factors);
      payloads.push_back(std::move(res.delta));
    }
    ParamSet avg = allreduce_avg(payloads);
    warm.rank = cfg.compression.rank1;
    warm.q_factors = std::move(warm0);
    for (int i = 0; i < cfg.D; ++i)
      reps[static_cast<size_t>(i)].error = ps_sub(deltas[static_cast<size_t>(i)], avg);

    ps_add(sum_delta, deltas[0]);
    ParamSet avg_plus_e = avg;
    ps_add(avg_plus_e, reps[0].error);
    ps_add(sum_avg_plus_e, avg_plus_e);
    out.err_norm_history.push_back(ps_l2_norm(reps[0].error));

    nesterov_outer_step(outer, anchor, avg);
  }
  out.final_err_norm = out.err_norm_history.empty() ? 0.0 : out.err_norm_history.back();
  const double den = std::max(1e-12, ps_l2_norm(sum_delta));
  out.rel_gap = ps_l2_norm(ps_sub(sum_delta, sum_avg_plus_e)) / den;
  return out;
}

// Small char-lm engine config over a deterministic demo corpus.
struct SmallCharSetup {
  dilocox::Dataset data;
  dilocox::EngineConfig cfg;
};

inline SmallCharSetup small_char_setup(uint64_t seed, int d = 2, int h1 = 4, int64_t steps = 16) {
  SmallCharSetup s;
  s.data = dilocox::corpus_from_bytes(dilocox::demo_corpus_bytes(4096, 7));
  s.cfg.mode = dilocox::Mode::Dilocox;
  s.cfg.D = d;
  s.cfg.M = 1;
  s.cfg.total_inner_steps = steps;
  s.cfg.batch = 2;
  s.cfg.eval_windows = 16;
  s.cfg.threads = 1;
  s.cfg.seed = seed;
  s.cfg.model = dilocox::char_lm_spec(s.data.vocab_size, 4, 4, {16, 16});
  s.cfg.schedule.H1 = h1;
  s.cfg.schedule.window_c = 3;
  s.cfg.compression.rank1 = 4;
  s.cfg.compression.quant.qbits = 4;
  s.cfg.net.clusters = 2;
  s.cfg.net.bandwidth_bps = 1e9;
  s.cfg.net.t_step_s = 0.5;
  return s;
}

}  // namespace testsup
