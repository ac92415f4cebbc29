#include <doctest.h>

#include <cmath>

#include "dilocox/collective.hpp"
#include "test_support.hpp"

using namespace dilocox;

namespace {

CompressedDelta raw_payload(std::vector<float> values) {
  const int64_t n = static_cast<int64_t>(values.size());
  ParamSet ps;
  ps.add("v", Tensor::from_data({n}, std::move(values)));
  return compress_raw(ps);
}

}  // namespace

TEST_SUITE_BEGIN("collective");

TEST_CASE("allreduce_avg with one worker is plain decompression") {
  ParamSet ps;
  RngStream rng(1, 0);
  ps.add("w", Tensor::gaussian({6, 4}, rng));
  ParamSet avg = allreduce_avg({compress_raw(ps)});
  CHECK(ps_equal_bits(avg, ps));
}

TEST_CASE("allreduce_avg means two payloads elementwise") {
  ParamSet avg = allreduce_avg({raw_payload({1.0f, 3.0f}), raw_payload({3.0f, 1.0f})});
  CHECK(avg.tensor(0)[0] == 2.0f);
  CHECK(avg.tensor(0)[1] == 2.0f);
}

TEST_CASE("allreduce_avg matches a naive sum-then-divide oracle bit-exactly") {
  const int d = 4;
  std::vector<CompressedDelta> payloads;
  std::vector<ParamSet> plains;
  for (int i = 0; i < d; ++i) {
    RngStream rng(static_cast<uint64_t>(i), 5);
    ParamSet ps;
    ps.add("w", Tensor::gaussian({8, 8}, rng));
    ps.add("b", Tensor::gaussian({8}, rng));
    payloads.push_back(compress_raw(ps));
    plains.push_back(std::move(ps));
  }
  ParamSet avg = allreduce_avg(payloads);

  // Oracle: double accumulation in worker order, then divide.
  for (int t = 0; t < avg.count(); ++t) {
    for (int64_t k = 0; k < avg.tensor(t).size(); ++k) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += static_cast<double>(plains[static_cast<size_t>(i)].tensor(t)[k]);
      const float want = static_cast<float>(acc / d);
      CHECK(avg.tensor(t)[k] == want);
    }
  }
}

TEST_CASE("allreduce_avg averaging commutes with per-worker reconstruction") {
  // Mean of decompressed low-rank payloads equals decompress-then-average
  // by construction; check against an explicit loop.
  const int d = 3;
  std::vector<CompressedDelta> payloads;
  QuantSpec spec;
  spec.qbits = 4;
  for (int i = 0; i < d; ++i) {
    RngStream data(static_cast<uint64_t>(i), 6);
    ParamSet ps;
    ps.add("w", Tensor::gaussian({16, 12}, data));
    RngStream c(7, 7);  // shared stream: aligned factor subspaces
    payloads.push_back(compress(ps, 4, spec, nullptr, 2, c).delta);
  }
  ParamSet avg = allreduce_avg(payloads);
  ParamSet manual = ParamSet::zeros_like(avg);
  for (int i = 0; i < d; ++i) {
    ParamSet dec = decompress(payloads[static_cast<size_t>(i)]);
    for (int64_t k = 0; k < manual.tensor(0).size(); ++k) manual.tensor(0)[k] += dec.tensor(0)[k] / d;
  }
  for (int64_t k = 0; k < avg.tensor(0).size(); ++k)
    CHECK(avg.tensor(0)[k] == doctest::Approx(manual.tensor(0)[k]).epsilon(1e-6));
}

TEST_CASE("allreduce_avg rejects mismatched metadata") {
  CHECK_THROWS_AS(allreduce_avg({raw_payload({1.0f}), raw_payload({1.0f, 2.0f})}), ValidationError);
  CHECK_THROWS_AS(allreduce_avg({}), ValidationError);
}

TEST_CASE("ring_volume endpoints") {
  CHECK(ring_volume(1e9, 1) == 0.0);
  CHECK(ring_volume(1024.0 * 1024 * 1024, 2) == 1024.0 * 1024 * 1024);  // factor = 1 at C=2
}

TEST_CASE("ring_volume reproduces the 100B-parameter worked example") {
  // 100e9 FP32 params over three clusters: 2 * (2/3) * 400 GB = 533.3 GB.
  const double bytes = ring_volume(100e9 * 4, 3);
  CHECK(bytes == doctest::Approx(533.333333e9).epsilon(1e-9));
}

TEST_CASE("comm_time matches the 1 Gbps worked example") {
  NetworkModel net;
  net.clusters = 3;
  net.bandwidth_bps = 1e9;
  const double s = comm_time(533.3333333333e9, net);
  CHECK(s / 3600.0 == doctest::Approx(1.185185).epsilon(1e-4));
}

TEST_CASE("comm_time is latency-only at zero volume and scales with bandwidth") {
  NetworkModel net;
  net.clusters = 3;
  net.bandwidth_bps = 1e9;
  net.latency_s = 0.01;
  CHECK(comm_time(0.0, net) == doctest::Approx(2 * 2 * 0.01));
  net.latency_s = 0.0;
  const double t1 = comm_time(1e9, net);
  net.bandwidth_bps = 2e9;
  CHECK(comm_time(1e9, net) == doctest::Approx(t1 / 2));
}

TEST_CASE("cost_report reproduces the paper-style worked arithmetic") {
  NetworkModel net;
  net.bandwidth_bps = 1e9;
  net.t_step_s = 1.0;
  CommReport r = cost_report(100e9, 4, 3, net, 500, 1.0);
  CHECK(r.inter_bytes == doctest::Approx(533.3333e9).epsilon(1e-6));
  CHECK(r.transfer_s / 3600.0 == doctest::Approx(1.185185).epsilon(1e-5));
  CHECK(r.compute_s / 3600.0 == doctest::Approx(0.138889).epsilon(1e-5));
  CHECK(r.idle_overlap_s / 3600.0 == doctest::Approx(1.046296).epsilon(1e-5));
  CHECK(r.idle_sync_s == r.transfer_s);
  CHECK(r.ratio_to_hide == doctest::Approx(r.transfer_s / r.compute_s));
}

TEST_CASE("cost_report compression ratio scales the transfer proportionally") {
  NetworkModel net;
  net.bandwidth_bps = 1e9;
  net.t_step_s = 1.0;
  CommReport base = cost_report(100e9, 4, 3, net, 500, 1.0);
  CommReport ten = cost_report(100e9, 4, 3, net, 500, 10.0);
  CHECK(ten.transfer_s == doctest::Approx(base.transfer_s / 10.0));
  CHECK(ten.transfer_s < ten.compute_s);  // 10x compression hides the transfer
  CHECK(ten.idle_overlap_s == 0.0);
}

TEST_CASE("cost_report idle is zero when compute covers the transfer") {
  NetworkModel net;
  net.bandwidth_bps = 1e12;
  net.t_step_s = 1.0;
  CommReport r = cost_report(1e6, 4, 2, net, 100, 1.0);
  CHECK(r.compute_s >= r.transfer_s);
  CHECK(r.idle_overlap_s == 0.0);
  CHECK(r.round_overlap_s == r.compute_s);
}

TEST_CASE("cost_report validates flags") {
  NetworkModel net;
  CHECK_THROWS_AS(cost_report(0, 4, 2, net, 10, 1.0), ValidationError);
  CHECK_THROWS_AS(cost_report(1e6, 0, 2, net, 10, 1.0), ValidationError);
  CHECK_THROWS_AS(cost_report(1e6, 4, 2, net, 0, 1.0), ValidationError);
  CHECK_THROWS_AS(cost_report(1e6, 4, 2, net, 10, 0.5), ValidationError);
}

TEST_CASE("format_report carries both decimal and binary byte figures") {
  NetworkModel net;
  net.bandwidth_bps = 1e9;
  net.t_step_s = 1.0;
  const std::string text = format_report(cost_report(100e9, 4, 3, net, 500, 1.0));
  CHECK(text.find("inter_cluster_gb = 533.333333") != std::string::npos);
  CHECK(text.find("inter_cluster_gib = ") != std::string::npos);
  CHECK(text.find("transfer_h = 1.185185") != std::string::npos);
  CHECK(text.find("compute_h = 0.138889") != std::string::npos);
  CHECK(text.find("idle_overlap_h = 1.046296") != std::string::npos);
}

TEST_SUITE_END();
