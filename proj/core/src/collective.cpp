#include "dilocox/collective.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dilocox {

void NetworkModel::validate() const {
  if (clusters < 1) throw ValidationError("network: clusters must be >= 1");
  if (!(bandwidth_bps > 0)) throw ValidationError("network: bandwidth must be positive");
  if (latency_s < 0) throw ValidationError("network: latency must be non-negative");
  if (!(t_step_s > 0)) throw ValidationError("network: t_step must be positive");
  if (intra_bandwidth_bps < 0) throw ValidationError("network: intra bandwidth must be non-negative");
}

ParamSet allreduce_avg(const std::vector<CompressedDelta>& payloads) {
  if (payloads.empty()) throw ValidationError("allreduce_avg: no payloads");
  for (size_t i = 1; i < payloads.size(); ++i)
    if (!payloads[0].same_metadata(payloads[i]))
      throw ValidationError("allreduce_avg: payload metadata disagrees across workers");

  const double inv = 1.0 / static_cast<double>(payloads.size());
  ParamSet first = decompress(payloads[0]);
  // Accumulate in double, worker order ascending.
  std::vector<std::vector<double>> acc(static_cast<size_t>(first.count()));
  for (int t = 0; t < first.count(); ++t) {
    const Tensor& ten = first.tensor(t);
    acc[static_cast<size_t>(t)].assign(ten.values().begin(), ten.values().end());
  }
  for (size_t w = 1; w < payloads.size(); ++w) {
    ParamSet dec = decompress(payloads[w]);
    for (int t = 0; t < first.count(); ++t) {
      const float* src = dec.tensor(t).data();
      auto& dst = acc[static_cast<size_t>(t)];
      for (size_t k = 0; k < dst.size(); ++k) dst[k] += static_cast<double>(src[k]);
    }
  }
  ParamSet out = ParamSet::zeros_like(first);
  for (int t = 0; t < first.count(); ++t) {
    float* dst = out.tensor(t).data();
    const auto& src = acc[static_cast<size_t>(t)];
    for (size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<float>(src[k] * inv);
  }
  return out;
}

double ring_volume(double payload_bytes, int clusters) {
  if (clusters < 1) throw ValidationError("ring_volume: clusters must be >= 1");
  if (payload_bytes < 0) throw ValidationError("ring_volume: payload must be non-negative");
  return 2.0 * static_cast<double>(clusters - 1) / static_cast<double>(clusters) * payload_bytes;
}

double comm_time(double volume_bytes, const NetworkModel& net) {
  net.validate();
  return volume_bytes * 8.0 / net.bandwidth_bps + 2.0 * static_cast<double>(net.clusters - 1) * net.latency_s;
}

CommReport cost_report(double param_count, int dtype_bytes, int clusters, const NetworkModel& net,
                       int64_t local_steps, double compression_ratio) {
  if (!(param_count > 0)) throw ValidationError("cost_report: param count must be positive");
  if (dtype_bytes < 1) throw ValidationError("cost_report: dtype bytes must be >= 1");
  if (local_steps < 1) throw ValidationError("cost_report: local steps must be >= 1");
  if (!(compression_ratio >= 1.0)) throw ValidationError("cost_report: compression ratio must be >= 1");
  NetworkModel n = net;
  n.clusters = clusters;
  n.validate();

  CommReport r;
  r.compression_ratio = compression_ratio;
  r.payload_bytes = param_count * static_cast<double>(dtype_bytes) / compression_ratio;
  r.inter_bytes = ring_volume(r.payload_bytes, clusters);
  r.transfer_s = comm_time(r.inter_bytes, n);
  r.compute_s = static_cast<double>(local_steps) * n.t_step_s;
  r.idle_sync_s = r.transfer_s;
  r.idle_overlap_s = std::max(0.0, r.transfer_s - r.compute_s);
  r.round_sync_s = r.compute_s + r.transfer_s;
  r.round_overlap_s = std::max(r.compute_s, r.transfer_s);
  const double uncompressed_transfer =
      comm_time(ring_volume(param_count * static_cast<double>(dtype_bytes), clusters), n);
  r.ratio_to_hide = r.compute_s > 0 ? uncompressed_transfer / r.compute_s : 0.0;
  return r;
}

std::string format_report(const CommReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  auto bytes_line = [&os](const char* key, double bytes) {
    os << key << "_gb = " << bytes / 1e9 << "\n";
    os << key << "_gib = " << bytes / (1024.0 * 1024.0 * 1024.0) << "\n";
  };
  bytes_line("payload", r.payload_bytes);
  bytes_line("inter_cluster", r.inter_bytes);
  os << "transfer_s = " << r.transfer_s << "\n";
  os << "transfer_h = " << r.transfer_s / 3600.0 << "\n";
  os << "compute_s = " << r.compute_s << "\n";
  os << "compute_h = " << r.compute_s / 3600.0 << "\n";
  os << "idle_sync_s = " << r.idle_sync_s << "\n";
  os << "idle_overlap_s = " << r.idle_overlap_s << "\n";
  os << "idle_overlap_h = " << r.idle_overlap_s / 3600.0 << "\n";
  os << "round_sync_s = " << r.round_sync_s << "\n";
  os << "round_overlap_s = " << r.round_overlap_s << "\n";
  os << "compression_ratio = " << r.compression_ratio << "\n";
  os << "ratio_to_hide_comm = " << r.ratio_to_hide << "\n";
  return os.str();
}

}  // namespace dilocox
