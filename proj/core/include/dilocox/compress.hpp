#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dilocox/params.hpp"
#include "dilocox/rng.hpp"

namespace dilocox {

enum class Rounding { Stochastic, Nearest };

Rounding rounding_from_string(const std::string& s);
std::string to_string(Rounding r);

// Symmetric integer quantization: codes live in [-(2^(q-1)-1), 2^(q-1)-1]
// with scale = max|x| / (2^(q-1)-1). q=1 leaves no representable level, so
// 2 <= q <= 8.
struct QuantSpec {
  int qbits = 4;
  Rounding rounding = Rounding::Stochastic;

  void validate() const;
  int levels() const { return (1 << (qbits - 1)) - 1; }
};

struct QuantChunk {
  std::vector<int8_t> codes;
  float scale = 0.0f;  // zero only for all-zero chunks
};

QuantChunk quantize(const float* x, int64_t n, const QuantSpec& spec, RngStream& rng);
void dequantize(const QuantChunk& chunk, float* out, int64_t n);

// Right-factor warm start carried across rounds; reinitialized when the
// operating rank changes.
struct WarmStart {
  int rank = 0;
  std::map<std::string, Tensor> q_factors;
};

struct LowRankResult {
  Tensor p;  // a x r, carries magnitudes
  Tensor q;  // b x r, orthonormal columns
};

// Warm-started subspace (power) iteration. Reconstruction is p * q^T.
LowRankResult lowrank_approx(const Tensor& m, int r, const Tensor* warm_q, int iters,
                             RngStream& rng);

enum class PayloadKind : uint8_t { LowRankQuant = 0, DenseQuant = 1, RawDense = 2 };

struct TensorPayload {
  std::string name;
  std::vector<int64_t> shape;
  PayloadKind kind = PayloadKind::RawDense;
  int rank = 0;   // LowRankQuant
  int qbits = 0;  // quantized kinds
  // LowRankQuant: factor codes with per-column scales.
  std::vector<int8_t> p_codes, q_codes;
  std::vector<float> p_scales, q_scales;
  // DenseQuant: one scale per tensor.
  QuantChunk dense;
  // RawDense.
  std::vector<float> raw;
};

struct CompressedDelta {
  std::vector<TensorPayload> tensors;
  int rank = 0;
  int qbits = 0;
  uint64_t payload_bits = 0;

  double payload_bytes() const { return static_cast<double>(payload_bits) / 8.0; }
  bool same_metadata(const CompressedDelta& o) const;
};

// Code bits plus FP32 scale overhead, per the wire layout:
//   2-D tensors: (a + b) * r * q + 2 * r * 32
//   1-D tensors: n * q + 32
//   raw tensors: n * 32
uint64_t payload_bits_formula(const CompressedDelta& cd);

struct CompressResult {
  CompressedDelta delta;
  // Float right factors before quantization, for next round's warm start.
  std::map<std::string, Tensor> q_factors;
};

// Low-rank-then-quantize for 2-D tensors (rank clamped per tensor to the
// shorter side), quantize-only for 1-D tensors.
CompressResult compress(const ParamSet& delta, int rank, const QuantSpec& spec,
                        const WarmStart* warm, int power_iters, RngStream& rng);

// FP32 passthrough payload (compression disabled).
CompressedDelta compress_raw(const ParamSet& delta);

ParamSet decompress(const CompressedDelta& cd);

// The end-to-end low-rank + quantization error bound 1 - (r/d) * 2^(-q).
double omega_bound(int r, int d, int q);

// ||decompress(cd) - delta||^2 / ||delta||^2 (0 for a zero delta).
double measure_error(const ParamSet& delta, const CompressedDelta& cd);

struct SparsePayload {
  std::vector<int64_t> indices;
  std::vector<float> values;
  uint64_t index_bits = 0;  // k * ceil(log2 d), or 64 for a seed-coded mask
  uint64_t value_bits = 0;  // k * 32
  uint64_t seed_used = 0;
};

// Keeps the k largest-magnitude entries; ties break toward the lower index.
SparsePayload topk_compress(const float* x, int64_t n, int64_t k);
// Keeps a seeded random subset; only the seed identifies the mask.
SparsePayload random_sparsify(const float* x, int64_t n, double ratio, RngStream& rng);

struct EffectiveRank {
  int aggregate = 1;
  std::vector<std::pair<std::string, int>> per_tensor;
  bool all_zero = false;
};

// Per 2-D tensor: smallest k whose top-k spectral energy reaches tau of the
// total. Aggregate is the parameter-count-weighted mean, rounded up and
// clamped to [1, r_max].
EffectiveRank effective_rank(const ParamSet& delta, double tau, int r_max);

// Wire format: header (names, shapes, kinds, r, q) + packed codes + scales.
std::vector<uint8_t> serialize(const CompressedDelta& cd);
CompressedDelta parse_compressed(const std::vector<uint8_t>& bytes);

}  // namespace dilocox
