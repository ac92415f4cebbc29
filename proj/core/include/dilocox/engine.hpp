#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dilocox/collective.hpp"
#include "dilocox/compress.hpp"
#include "dilocox/data.hpp"
#include "dilocox/model.hpp"
#include "dilocox/optim.hpp"

namespace dilocox {

enum class Mode { AllReducePerStep, DilocoSync, Dilocox, DilocoxNoOverlap, DilocoxNoCompress };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);
std::vector<Mode> all_modes();

struct ScheduleConfig {
  int H1 = 125;
  bool adaptive = true;
  int window_c = 5;
  double tau = 0.5;
  int H_min = 0;  // 0 resolves to ceil(H1 / 10)

  int resolved_H_min() const { return H_min > 0 ? H_min : (H1 + 9) / 10; }
};

struct CompressionConfig {
  bool enabled = true;
  int rank1 = 64;
  QuantSpec quant;
  int power_iters = 2;
};

struct EngineConfig {
  Mode mode = Mode::Dilocox;
  int D = 1;  // data-parallel replicas
  int M = 1;  // pipeline stages
  int64_t total_inner_steps = 1000;
  int batch = 4;
  int eval_windows = 64;
  int threads = 1;  // 0 = one per replica up to the hardware limit
  uint64_t seed = 1;

  ModelSpec model;
  ScheduleConfig schedule;
  CompressionConfig compression;
  AdamWHyper inner_opt;
  NesterovHyper outer_opt;
  NetworkModel net;  // net.clusters is the cluster count C

  // Alternative round semantics: replicas resume from their local params
  // instead of the refreshed anchor.
  bool continue_from_local = false;
  double outer_step_epsilon_s = 0.0;

  // Behavior overrides for equivalence checks; normally the mode decides.
  std::optional<bool> force_overlap;
  std::optional<bool> force_compress;

  void validate() const;
  bool per_step_allreduce() const { return mode == Mode::AllReducePerStep; }
  bool overlap() const;
  bool compress_enabled() const;
  // Rank/step adaptation needs a compressed payload to size; it is active
  // only for the dilocox modes with compression on.
  bool adaptive_enabled() const;
  int resolved_threads() const;
};

struct RoundRecord {
  int64_t round = 0;
  int64_t inner_steps = 0;
  double train_loss = 0;
  double eval_loss = 0;
  int r_t = 0;
  int H_t = 0;
  int r_prime = 0;  // effective rank measured this round (0 when not measured)
  double payload_bytes = 0;
  double inter_bytes = 0;
  double intra_bytes = 0;
  double compute_s = 0;
  double comm_s = 0;
  double idle_s = 0;
  double round_s = 0;
  double clock_s = 0;  // cumulative virtual time
  double err_buf_norm = 0;
  double comp_error = 0;     // measured relative squared error (worker 0)
  double omega_sq = 0;       // size-weighted per-tensor bound, d = min(a, b)
  bool bound_violated = false;
  double drift_ratio = 0;    // ||local-anchor||^2 / (lr^2 H^2 mean||g||^2)
};

struct MetricsLog {
  std::vector<RoundRecord> rounds;
};

std::string jsonl_line(const RoundRecord& r);
void write_metrics_jsonl(const MetricsLog& log, const std::string& path);
void write_summary_csv(const MetricsLog& log, const std::string& path);

struct ReplicaState {
  Dataset shard;
  AdamWState opt;
  ParamSet error;          // e
  ParamSet delta_pending;  // staged pseudo-gradient from the previous round
  ParamSet local;          // end-of-round local params
  RngStream data_rng{0, 0};
};

struct RoundState {
  StagePlan plan;
  ParamSet anchor;
  std::vector<ReplicaState> replicas;
  NesterovState outer;
  WarmStart warm;
  std::vector<int> rank_window;  // recent r' values, at most window_c entries
  int r_t = 1;
  int H_t = 1;
  int64_t round = 0;  // completed rounds
  int64_t steps_done = 0;
  double clock_s = 0;
  double cum_payload_bytes = 0;
  double cum_inter_bytes = 0;
  double cum_intra_bytes = 0;
  bool has_pending = false;
  double max_delta_norm = 0;
  Dataset eval;
};

RoundState init_round_state(const EngineConfig& cfg, const Dataset& full, double eval_fraction);

// One synchronous round: train H steps, average the fresh pseudo-gradients,
// apply the outer step immediately; clock adds compute + transfer.
RoundRecord run_round_sync(RoundState& state, const EngineConfig& cfg);

// One overlapped round: the collective for the previous round's
// pseudo-gradients runs alongside training in virtual time, and the outer
// step applies the one-step-delayed average; clock adds max(compute, transfer).
RoundRecord run_round_overlapped(RoundState& state, const EngineConfig& cfg);

// Alg-style controller: defaults until the window holds c observations, then
// r_t = ceil(mean of last c r'), alpha = (r1 - r_t)/r1, H_t = round(H1 * alpha)
// clamped to [H_min, H1].
std::pair<int, int> adapt_compression(const std::vector<int>& window, int r1, int H1, int c,
                                      int h_min);

double eval_loss(const ModelSpec& spec, const ParamSet& params, const Dataset& heldout,
                 int windows);

struct ExperimentResult {
  MetricsLog log;
  ParamSet final_params;
};

ExperimentResult run_experiment(const EngineConfig& cfg, const Dataset& full,
                                double eval_fraction);

struct CompareRow {
  Mode mode = Mode::Dilocox;
  double final_eval_loss = 0;
  double total_inter_bytes = 0;
  double total_payload_bytes = 0;
  double sim_time_s = 0;
  double tokens_per_s = 0;
  int64_t total_inner_steps = 0;
};

// Runs every mode with the same seeds and inner-step budget.
std::vector<CompareRow> run_compare(const EngineConfig& base, const Dataset& full,
                                    double eval_fraction);
std::string compare_csv(const std::vector<CompareRow>& rows);

}  // namespace dilocox
