#pragma once

#include <string>
#include <vector>

#include "dilocox/compress.hpp"
#include "dilocox/params.hpp"

namespace dilocox {

struct NetworkModel {
  int clusters = 1;               // C
  double bandwidth_bps = 1e9;     // inter-cluster bits per second
  double latency_s = 0.0;         // per message
  double t_step_s = 1.0;          // seconds per inner training step
  double intra_bandwidth_bps = 0; // 0 = intra-cluster traffic not time-costed

  void validate() const;
};

// Element-wise mean of the decompressed payloads, accumulated in float64 in
// worker-index order, so the result is independent of execution interleaving.
ParamSet allreduce_avg(const std::vector<CompressedDelta>& payloads);

// Bytes crossing inter-cluster links in a ring all-reduce: 2 * (C-1)/C * payload.
double ring_volume(double payload_bytes, int clusters);

// volume * 8 / bandwidth + 2 * (C-1) messages * latency.
double comm_time(double volume_bytes, const NetworkModel& net);

struct CommReport {
  double payload_bytes = 0;      // per-worker payload entering the collective
  double inter_bytes = 0;        // bytes on inter-cluster links per round
  double transfer_s = 0;         // inter-cluster transfer time per round
  double compute_s = 0;          // H * t_step
  double idle_sync_s = 0;        // serial schedule: full transfer is idle
  double idle_overlap_s = 0;     // overlapped schedule: max(0, transfer - compute)
  double round_sync_s = 0;       // compute + transfer
  double round_overlap_s = 0;    // max(compute, transfer)
  double compression_ratio = 1;  // applied payload compression
  double ratio_to_hide = 0;      // compression needed so transfer <= compute
};

// Reproduces the analytic round arithmetic: local compute H*t_step, ring
// transfer of the (optionally compressed) FP32 payload, idle time under the
// serial and overlapped schedules.
CommReport cost_report(double param_count, int dtype_bytes, int clusters, const NetworkModel& net,
                       int64_t local_steps, double compression_ratio);

// Flat key = value block (decimal GB and binary GiB for byte figures).
std::string format_report(const CommReport& r);

}  // namespace dilocox
