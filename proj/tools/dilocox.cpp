// dilocox — desk-scale simulator for low-communication decentralized
// training: dual inner/outer optimizers, one-step-delay overlap of
// communication and local training, and adaptive low-rank + quantization
// pseudo-gradient compression over a bandwidth-accurate virtual clock.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dilocox/config.hpp"
#include "dilocox/engine.hpp"

namespace fs = std::filesystem;
using namespace dilocox;

namespace {

constexpr const char* kConfigSchema = R"(Config file keys (key = value, # comments, [section] headers):

[run]      mode (allreduce-per-step|diloco-sync|dilocox|dilocox-no-overlap|
           dilocox-no-compress), total_inner_steps, seed, threads, output_dir
[model]    kind (mlp|char-lm), widths (comma list), activation (tanh|relu),
           seq_len + emb_dim (char-lm), classes (mlp)
[data]     kind (char-corpus|synthetic-regression|synthetic-classification),
           path + max_bytes (char-corpus), samples + in_dim + out_dim +
           teacher_hidden (synthetic), eval_fraction, batch, eval_windows
[parallel] D (data-parallel replicas), M (pipeline stages), C (clusters)
[network]  bandwidth_gbps, latency_s, t_step_s, intra_bandwidth_gbps
[compression] enabled, r1, q (2-8), rounding (stochastic|nearest), power_iters
[schedule] H1, adaptive, c (rank window), tau, H_min (0 = ceil(H1/10))
[optimizer] inner_lr, beta1, beta2, eps, weight_decay, outer_lr,
           outer_momentum, outer_classical, continue_from_local,
           outer_step_epsilon_s
)";

int run_train(const std::string& config_path) {
  FullConfig cfg = parse_config_file(config_path);
  cfg.validate();
  Dataset data = load_dataset(cfg);  // fail before any output exists
  cfg.engine.validate();

  fs::create_directories(cfg.output_dir);
  ExperimentResult res = run_experiment(cfg.engine, data, cfg.eval_fraction);

  const fs::path out(cfg.output_dir);
  write_metrics_jsonl(res.log, (out / "metrics.jsonl").string());
  write_summary_csv(res.log, (out / "summary.csv").string());
  save_checkpoint((out / "checkpoint.bin").string(), res.final_params);
  {
    std::ofstream rc(out / "resolved.cfg", std::ios::binary);
    if (!rc) throw IoError("cannot write resolved config");
    rc << resolved_config_text(cfg);
  }

  const RoundRecord& last = res.log.rounds.back();
  std::printf("mode=%s rounds=%zu inner_steps=%lld final_train_loss=%.6f final_eval_loss=%.6f\n",
              to_string(cfg.engine.mode).c_str(), res.log.rounds.size(),
              static_cast<long long>(cfg.engine.total_inner_steps), last.train_loss,
              last.eval_loss);
  std::printf("sim_time_s=%.6f inter_cluster_gb=%.6f outputs=%s\n", last.clock_s,
              [&] {
                double total = 0;
                for (const auto& r : res.log.rounds) total += r.inter_bytes;
                return total / 1e9;
              }(),
              cfg.output_dir.c_str());
  return 0;
}

int run_compare_cmd(const std::string& config_path) {
  FullConfig cfg = parse_config_file(config_path);
  cfg.validate();
  Dataset data = load_dataset(cfg);
  cfg.engine.validate();

  std::vector<CompareRow> rows = run_compare(cfg.engine, data, cfg.eval_fraction);
  fs::create_directories(cfg.output_dir);
  const fs::path out(cfg.output_dir);
  const std::string csv = compare_csv(rows);
  {
    std::ofstream f(out / "compare.csv", std::ios::binary);
    if (!f) throw IoError("cannot write compare.csv");
    f << csv;
  }
  {
    std::ofstream rc(out / "resolved.cfg", std::ios::binary);
    if (!rc) throw IoError("cannot write resolved config");
    rc << resolved_config_text(cfg);
  }
  std::cout << csv;
  return 0;
}

struct CostFlags {
  double params = 100e9;
  int dtype_bytes = 4;
  int clusters = 3;
  double bandwidth_gbps = 1.0;
  double latency_s = 0.0;
  int64_t local_steps = 500;
  double t_step_s = 1.0;
  double compression_ratio = 1.0;
  bool paper_example = false;
};

int run_cost(const CostFlags& f) {
  CostFlags v = f;
  if (v.paper_example) {
    v.params = 100e9;
    v.dtype_bytes = 4;
    v.clusters = 3;
    v.bandwidth_gbps = 1.0;
    v.latency_s = 0.0;
    v.local_steps = 500;
    v.t_step_s = 1.0;
    v.compression_ratio = 1.0;
  }
  if (v.params <= 0 || v.bandwidth_gbps <= 0 || v.t_step_s <= 0 || v.local_steps <= 0 ||
      v.clusters < 1 || v.dtype_bytes < 1 || v.compression_ratio < 1.0)
    throw ValidationError("cost: all flags must be positive (compression ratio >= 1)");

  NetworkModel net;
  net.clusters = v.clusters;
  net.bandwidth_bps = v.bandwidth_gbps * 1e9;
  net.latency_s = v.latency_s;
  net.t_step_s = v.t_step_s;
  CommReport r =
      cost_report(v.params, v.dtype_bytes, v.clusters, net, v.local_steps, v.compression_ratio);
  std::cout << format_report(r);
  return 0;
}

struct BenchFlags {
  int rows = 256;
  int cols = 256;
  std::vector<int> r_grid{16, 64, 128};
  std::vector<int> q_grid{4, 6, 8};
  int seeds = 10;
  std::string rounding = "stochastic";
  int power_iters = 2;
  std::string csv_out;
};

int run_bench_compress(const BenchFlags& f) {
  if (f.rows < 2 || f.cols < 2 || f.seeds < 1) throw ValidationError("bench: bad shape or seeds");
  QuantSpec qs;
  qs.rounding = rounding_from_string(f.rounding);
  const int dmin = std::min(f.rows, f.cols);
  const int64_t total = static_cast<int64_t>(f.rows) * f.cols;
  for (int r : f.r_grid)
    if (r < 1 || r > dmin) throw ValidationError("bench: rank out of range for shape");
  for (int q : f.q_grid)
    if (q < 2 || q > 8) throw ValidationError("bench: q out of range");

  std::ostringstream csv;
  csv << "input,compressor,r,q,mean_error,omega_sq_min_dim,omega_sq_total_d,payload_bits,"
         "compression_ratio,violations,seeds\n";
  std::printf("%-9s %-12s %5s %3s %12s %12s %12s %14s %8s %6s\n", "input", "compressor", "r", "q",
              "mean_err", "w2(min_d)", "w2(total_d)", "payload_bits", "ratio", "viol");

  const uint64_t raw_bits = static_cast<uint64_t>(total) * 32ull;
  for (const char* input_kind : {"gaussian", "lowrank+noise"}) {
    for (int r : f.r_grid) {
      for (int q : f.q_grid) {
        qs.qbits = q;
        double err_sum = 0.0;
        int violations = 0;
        uint64_t bits = 0;
        const double bound_min = omega_bound(r, dmin, q);
        const double bound_total =
            omega_bound(r, static_cast<int>(std::min<int64_t>(total, 1 << 30)), q);
        for (int s = 0; s < f.seeds; ++s) {
          RngStream rng(0xbe9c4, stream_key({static_cast<uint64_t>(s), static_cast<uint64_t>(r),
                                             static_cast<uint64_t>(q)}));
          Tensor m;
          if (std::string(input_kind) == "gaussian") {
            m = Tensor::gaussian({f.rows, f.cols}, rng);
          } else {
            // planted low-rank structure plus 10% noise
            const int rank_true = std::max(1, r / 2);
            Tensor a = Tensor::gaussian({f.rows, rank_true}, rng);
            Tensor b = Tensor::gaussian({f.cols, rank_true}, rng);
            m = matmul_nt(a, b);
            Tensor n = Tensor::gaussian({f.rows, f.cols}, rng);
            const double scale = 0.1 * std::sqrt(frobenius_norm_sq(m) / frobenius_norm_sq(n));
            for (int64_t i = 0; i < m.size(); ++i) m[i] += static_cast<float>(scale) * n[i];
          }
          ParamSet ps;
          ps.add("t", m);
          RngStream crng(0xc0de, static_cast<uint64_t>(s));
          CompressResult res = compress(ps, r, qs, nullptr, f.power_iters, crng);
          const double err = measure_error(ps, res.delta);
          err_sum += err;
          bits = res.delta.payload_bits;
          if (err > bound_min) ++violations;
        }
        const double mean_err = err_sum / f.seeds;
        const double ratio = static_cast<double>(raw_bits) / static_cast<double>(bits);
        std::printf("%-9s %-12s %5d %3d %12.6f %12.6f %12.6f %14llu %8.2f %3d/%-3d\n", input_kind,
                    "lowrank+q", r, q, mean_err, bound_min, bound_total,
                    static_cast<unsigned long long>(bits), ratio, violations, f.seeds);
        csv << input_kind << ",lowrank+q," << r << ',' << q << ',' << mean_err << ',' << bound_min
            << ',' << bound_total << ',' << bits << ',' << ratio << ',' << violations << ','
            << f.seeds << "\n";
      }
    }
  }

  // Comparator sparsifiers on gaussian input, budget-matched to the smallest
  // low-rank payload of the grid.
  {
    int r_ref = f.r_grid.front();
    int q_ref = f.q_grid.front();
    const uint64_t budget =
        (static_cast<uint64_t>(f.rows) + f.cols) * static_cast<uint64_t>(r_ref) * q_ref +
        2ull * r_ref * 32ull;
    const uint64_t idx_bits = static_cast<uint64_t>(std::ceil(std::log2(static_cast<double>(total))));
    const int64_t k = std::max<int64_t>(1, static_cast<int64_t>(budget / (idx_bits + 32)));
    const double ratio_rand = std::min(1.0, static_cast<double>(budget) / 32.0 / static_cast<double>(total));
    double err_topk = 0.0, err_rand = 0.0;
    uint64_t bits_topk = 0, bits_rand = 0;
    for (int s = 0; s < f.seeds; ++s) {
      RngStream rng(0xbe9c5, static_cast<uint64_t>(s));
      Tensor m = Tensor::gaussian({f.rows, f.cols}, rng);
      const double m_energy = frobenius_norm_sq(m);
      SparsePayload tk = topk_compress(m.data(), total, k);
      SparsePayload rs = random_sparsify(m.data(), total, ratio_rand, rng);
      auto sparse_error = [&](const SparsePayload& sp) {
        double kept = 0.0;
        for (float v : sp.values) kept += static_cast<double>(v) * v;
        return (m_energy - kept) / m_energy;  // zeros elsewhere
      };
      err_topk += sparse_error(tk);
      err_rand += sparse_error(rs);
      bits_topk = tk.index_bits + tk.value_bits;
      bits_rand = rs.index_bits + rs.value_bits;
    }
    err_topk /= f.seeds;
    err_rand /= f.seeds;
    std::printf("%-9s %-12s %5lld %3s %12.6f %12s %12s %14llu %8.2f %6s\n", "gaussian", "top-k",
                static_cast<long long>(k), "-", err_topk, "-", "-",
                static_cast<unsigned long long>(bits_topk),
                static_cast<double>(raw_bits) / bits_topk, "-");
    std::printf("%-9s %-12s %5.3f %3s %12.6f %12s %12s %14llu %8.2f %6s\n", "gaussian",
                "random-mask", ratio_rand, "-", err_rand, "-", "-",
                static_cast<unsigned long long>(bits_rand),
                static_cast<double>(raw_bits) / bits_rand, "-");
    csv << "gaussian,top-k," << k << ",-," << err_topk << ",-,-," << bits_topk << ','
        << static_cast<double>(raw_bits) / bits_topk << ",-,-\n";
    csv << "gaussian,random-mask," << ratio_rand << ",-," << err_rand << ",-,-," << bits_rand << ','
        << static_cast<double>(raw_bits) / bits_rand << ",-,-\n";
  }

  if (!f.csv_out.empty()) {
    std::ofstream out(f.csv_out, std::ios::binary);
    if (!out) throw IoError("cannot write csv: " + f.csv_out);
    out << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale simulator for low-communication decentralized training"};
  app.require_subcommand(1);
  app.footer(kConfigSchema);

  std::string train_config, compare_config;
  auto* train = app.add_subcommand("train", "Run one training experiment from a config file");
  train->add_option("--config", train_config, "Config file path")->required();

  auto* compare = app.add_subcommand(
      "compare", "Run every mode with equalized step budgets and shared seeds");
  compare->add_option("--config", compare_config, "Config file path")->required();

  CostFlags cost;
  auto* cost_cmd = app.add_subcommand("cost", "Analytic communication/idle cost calculator");
  cost_cmd->add_option("--params", cost.params, "Model parameter count");
  cost_cmd->add_option("--dtype-bytes", cost.dtype_bytes, "Bytes per value (4 = FP32)");
  cost_cmd->add_option("--clusters", cost.clusters, "Cluster count C");
  cost_cmd->add_option("--bandwidth-gbps", cost.bandwidth_gbps, "Inter-cluster bandwidth");
  cost_cmd->add_option("--latency-s", cost.latency_s, "Per-message latency");
  cost_cmd->add_option("--local-steps", cost.local_steps, "Local steps H per round");
  cost_cmd->add_option("--t-step-s", cost.t_step_s, "Seconds per local step");
  cost_cmd->add_option("--compression-ratio", cost.compression_ratio, "Payload compression ratio");
  cost_cmd->add_flag("--paper-example", cost.paper_example,
                     "100B params, FP32, C=3, 1 Gbps, H=500, 1 s/step");

  BenchFlags bench;
  auto* bench_cmd =
      app.add_subcommand("bench-compress", "Compressor error/volume table over an (r, q) grid");
  bench_cmd->add_option("--rows", bench.rows, "Tensor rows");
  bench_cmd->add_option("--cols", bench.cols, "Tensor cols");
  bench_cmd->add_option("--r-grid", bench.r_grid, "Ranks to test")->delimiter(',');
  bench_cmd->add_option("--q-grid", bench.q_grid, "Bit widths to test")->delimiter(',');
  bench_cmd->add_option("--seeds", bench.seeds, "Seeded trials per cell");
  bench_cmd->add_option("--rounding", bench.rounding, "stochastic|nearest");
  bench_cmd->add_option("--power-iters", bench.power_iters, "Subspace iterations");
  bench_cmd->add_option("--csv", bench.csv_out, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return run_train(train_config);
    if (compare->parsed()) return run_compare_cmd(compare_config);
    if (cost_cmd->parsed()) return run_cost(cost);
    if (bench_cmd->parsed()) return run_bench_compress(bench);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
