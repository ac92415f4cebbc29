#include "dilocox/compress.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wire.hpp"

namespace dilocox {

Rounding rounding_from_string(const std::string& s) {
  if (s == "stochastic") return Rounding::Stochastic;
  if (s == "nearest") return Rounding::Nearest;
  throw ValidationError("unknown rounding mode: " + s);
}

std::string to_string(Rounding r) { return r == Rounding::Stochastic ? "stochastic" : "nearest"; }

void QuantSpec::validate() const {
  if (qbits < 2 || qbits > 8)
    throw ValidationError("quantization bits must be in [2, 8]");
}

QuantChunk quantize(const float* x, int64_t n, const QuantSpec& spec, RngStream& rng) {
  spec.validate();
  QuantChunk out;
  out.codes.resize(static_cast<size_t>(n), 0);
  float maxabs = 0.0f;
  for (int64_t i = 0; i < n; ++i) maxabs = std::max(maxabs, std::fabs(x[i]));
  if (maxabs == 0.0f) return out;  // scale 0, codes 0

  const int levels = spec.levels();
  out.scale = maxabs / static_cast<float>(levels);
  const float inv = 1.0f / out.scale;
  for (int64_t i = 0; i < n; ++i) {
    const float y = x[i] * inv;
    int code;
    if (spec.rounding == Rounding::Nearest) {
      code = static_cast<int>(std::lrintf(y));
    } else {
      const float fl = std::floor(y);
      const float frac = y - fl;
      code = static_cast<int>(fl) + (rng.next_unit_f() < frac ? 1 : 0);
    }
    code = std::clamp(code, -levels, levels);
    out.codes[static_cast<size_t>(i)] = static_cast<int8_t>(code);
  }
  return out;
}

void dequantize(const QuantChunk& chunk, float* out, int64_t n) {
  if (static_cast<int64_t>(chunk.codes.size()) != n) throw ShapeError("dequantize: size mismatch");
  for (int64_t i = 0; i < n; ++i) out[i] = static_cast<float>(chunk.codes[static_cast<size_t>(i)]) * chunk.scale;
}

LowRankResult lowrank_approx(const Tensor& m, int r, const Tensor* warm_q, int iters,
                             RngStream& rng) {
  if (m.ndim() != 2) throw ShapeError("lowrank_approx: expected a 2-D tensor");
  const int64_t a = m.rows(), b = m.cols();
  if (r < 1 || r > std::min(a, b)) throw ValidationError("lowrank_approx: rank out of range");
  if (iters < 1) throw ValidationError("lowrank_approx: iters must be >= 1");

  Tensor q;
  if (warm_q != nullptr && warm_q->ndim() == 2 && warm_q->rows() == b && warm_q->cols() == r) {
    q = *warm_q;
  } else {
    Tensor init = Tensor::uniform({b, r}, -1.0f, 1.0f, rng);
    q = orthonormalize(init).q;
  }
  for (int it = 0; it < iters; ++it) {
    Tensor p = orthonormalize(matmul(m, q)).q;
    q = orthonormalize(matmul_tn(m, p)).q;
  }
  LowRankResult out;
  out.q = std::move(q);
  out.p = matmul(m, out.q);
  return out;
}

bool CompressedDelta::same_metadata(const CompressedDelta& o) const {
  if (rank != o.rank || qbits != o.qbits || tensors.size() != o.tensors.size()) return false;
  for (size_t i = 0; i < tensors.size(); ++i) {
    const TensorPayload& x = tensors[i];
    const TensorPayload& y = o.tensors[i];
    if (x.name != y.name || x.shape != y.shape || x.kind != y.kind || x.rank != y.rank ||
        x.qbits != y.qbits)
      return false;
  }
  return true;
}

uint64_t payload_bits_formula(const CompressedDelta& cd) {
  uint64_t bits = 0;
  for (const TensorPayload& t : cd.tensors) {
    int64_t n = 1;
    for (int64_t d : t.shape) n *= d;
    switch (t.kind) {
      case PayloadKind::LowRankQuant: {
        const uint64_t a = static_cast<uint64_t>(t.shape[0]);
        const uint64_t b = static_cast<uint64_t>(t.shape[1]);
        const uint64_t r = static_cast<uint64_t>(t.rank);
        bits += (a + b) * r * static_cast<uint64_t>(t.qbits) + 2ull * r * 32ull;
        break;
      }
      case PayloadKind::DenseQuant:
        bits += static_cast<uint64_t>(n) * static_cast<uint64_t>(t.qbits) + 32ull;
        break;
      case PayloadKind::RawDense:
        bits += static_cast<uint64_t>(n) * 32ull;
        break;
    }
  }
  return bits;
}

namespace {

// Per-column quantization of an a x r factor; column-major code layout.
void quantize_columns(const Tensor& f, const QuantSpec& spec, RngStream& rng,
                      std::vector<int8_t>& codes, std::vector<float>& scales) {
  const int64_t rows = f.rows(), cols = f.cols();
  codes.assign(static_cast<size_t>(rows * cols), 0);
  scales.assign(static_cast<size_t>(cols), 0.0f);
  std::vector<float> col(static_cast<size_t>(rows));
  for (int64_t j = 0; j < cols; ++j) {
    for (int64_t i = 0; i < rows; ++i) col[static_cast<size_t>(i)] = f.at(i, j);
    QuantChunk chunk = quantize(col.data(), rows, spec, rng);
    scales[static_cast<size_t>(j)] = chunk.scale;
    std::copy(chunk.codes.begin(), chunk.codes.end(), codes.begin() + j * rows);
  }
}

Tensor dequantize_columns(const std::vector<int8_t>& codes, const std::vector<float>& scales,
                          int64_t rows, int64_t cols) {
  Tensor f({rows, cols});
  for (int64_t j = 0; j < cols; ++j) {
    const float s = scales[static_cast<size_t>(j)];
    const int8_t* src = codes.data() + j * rows;
    for (int64_t i = 0; i < rows; ++i) f.at(i, j) = static_cast<float>(src[i]) * s;
  }
  return f;
}

}  // namespace

CompressResult compress(const ParamSet& delta, int rank, const QuantSpec& spec,
                        const WarmStart* warm, int power_iters, RngStream& rng) {
  spec.validate();
  if (rank < 1) throw ValidationError("compress: rank must be >= 1");
  CompressResult out;
  out.delta.rank = rank;
  out.delta.qbits = spec.qbits;
  for (int i = 0; i < delta.count(); ++i) {
    const Tensor& t = delta.tensor(i);
    TensorPayload pay;
    pay.name = delta.name(i);
    pay.shape = t.shape();
    if (t.ndim() == 2) {
      const int r_eff = static_cast<int>(std::min<int64_t>(rank, std::min(t.rows(), t.cols())));
      const Tensor* warm_q = nullptr;
      if (warm != nullptr && warm->rank == rank) {
        auto it = warm->q_factors.find(pay.name);
        if (it != warm->q_factors.end()) warm_q = &it->second;
      }
      LowRankResult lr = lowrank_approx(t, r_eff, warm_q, power_iters, rng);
      pay.kind = PayloadKind::LowRankQuant;
      pay.rank = r_eff;
      pay.qbits = spec.qbits;
      quantize_columns(lr.p, spec, rng, pay.p_codes, pay.p_scales);
      quantize_columns(lr.q, spec, rng, pay.q_codes, pay.q_scales);
      out.q_factors.emplace(pay.name, std::move(lr.q));
    } else if (t.ndim() == 1) {
      pay.kind = PayloadKind::DenseQuant;
      pay.qbits = spec.qbits;
      pay.dense = quantize(t.data(), t.size(), spec, rng);
    } else {
      throw ShapeError("compress: only 1-D and 2-D tensors are supported");
    }
    out.delta.tensors.push_back(std::move(pay));
  }
  out.delta.payload_bits = payload_bits_formula(out.delta);
  return out;
}

CompressedDelta compress_raw(const ParamSet& delta) {
  CompressedDelta out;
  out.rank = 0;
  out.qbits = 32;
  for (int i = 0; i < delta.count(); ++i) {
    TensorPayload pay;
    pay.name = delta.name(i);
    pay.shape = delta.tensor(i).shape();
    pay.kind = PayloadKind::RawDense;
    pay.raw = delta.tensor(i).values();
    out.tensors.push_back(std::move(pay));
  }
  out.payload_bits = payload_bits_formula(out);
  return out;
}

ParamSet decompress(const CompressedDelta& cd) {
  ParamSet out;
  for (const TensorPayload& pay : cd.tensors) {
    int64_t n = 1;
    for (int64_t d : pay.shape) n *= d;
    switch (pay.kind) {
      case PayloadKind::LowRankQuant: {
        if (pay.shape.size() != 2) throw FormatError("low-rank payload must be 2-D");
        const int64_t a = pay.shape[0], b = pay.shape[1];
        const int64_t r = pay.rank;
        if (static_cast<int64_t>(pay.p_codes.size()) != a * r ||
            static_cast<int64_t>(pay.q_codes.size()) != b * r)
          throw FormatError("low-rank payload code count mismatch");
        Tensor p = dequantize_columns(pay.p_codes, pay.p_scales, a, r);
        Tensor q = dequantize_columns(pay.q_codes, pay.q_scales, b, r);
        out.add(pay.name, matmul_nt(p, q));
        break;
      }
      case PayloadKind::DenseQuant: {
        if (static_cast<int64_t>(pay.dense.codes.size()) != n)
          throw FormatError("dense payload code count mismatch");
        Tensor t(pay.shape);
        dequantize(pay.dense, t.data(), n);
        out.add(pay.name, std::move(t));
        break;
      }
      case PayloadKind::RawDense: {
        if (static_cast<int64_t>(pay.raw.size()) != n)
          throw FormatError("raw payload count mismatch");
        Tensor t(pay.shape);
        std::copy(pay.raw.begin(), pay.raw.end(), t.values().begin());
        out.add(pay.name, std::move(t));
        break;
      }
    }
  }
  return out;
}

double omega_bound(int r, int d, int q) {
  if (r < 1 || r > d) throw ValidationError("omega_bound: need 1 <= r <= d");
  if (q < 0) throw ValidationError("omega_bound: need q >= 0");
  return 1.0 - (static_cast<double>(r) / static_cast<double>(d)) * std::pow(2.0, -q);
}

double measure_error(const ParamSet& delta, const CompressedDelta& cd) {
  ParamSet rec = decompress(cd);
  if (!rec.same_layout(delta)) throw ShapeError("measure_error: layouts disagree");
  double num = 0.0, den = 0.0;
  for (int i = 0; i < delta.count(); ++i) {
    const float* d = delta.tensor(i).data();
    const float* r = rec.tensor(i).data();
    const int64_t n = delta.tensor(i).size();
    for (int64_t k = 0; k < n; ++k) {
      const double diff = static_cast<double>(r[k]) - static_cast<double>(d[k]);
      num += diff * diff;
      den += static_cast<double>(d[k]) * static_cast<double>(d[k]);
    }
  }
  if (den == 0.0) return 0.0;
  return num / den;
}

SparsePayload topk_compress(const float* x, int64_t n, int64_t k) {
  if (k < 1 || k > n) throw ValidationError("topk_compress: need 0 < k <= n");
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int64_t i, int64_t j) {
    const float ai = std::fabs(x[i]), aj = std::fabs(x[j]);
    if (ai != aj) return ai > aj;
    return i < j;
  });
  SparsePayload out;
  out.indices.assign(order.begin(), order.begin() + k);
  std::sort(out.indices.begin(), out.indices.end());
  out.values.reserve(static_cast<size_t>(k));
  for (int64_t idx : out.indices) out.values.push_back(x[idx]);
  const uint64_t idx_bits = n > 1 ? static_cast<uint64_t>(std::ceil(std::log2(static_cast<double>(n)))) : 0;
  out.index_bits = static_cast<uint64_t>(k) * idx_bits;
  out.value_bits = static_cast<uint64_t>(k) * 32ull;
  return out;
}

SparsePayload random_sparsify(const float* x, int64_t n, double ratio, RngStream& rng) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ValidationError("random_sparsify: need 0 < ratio <= 1");
  const int64_t k = std::max<int64_t>(1, static_cast<int64_t>(std::llround(ratio * static_cast<double>(n))));
  // The mask is fully determined by the stream: sample k distinct indices
  // (partial Fisher-Yates over the index range).
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  SparsePayload out;
  out.seed_used = rng.next_u64();
  RngStream mask(out.seed_used, 0x3a5c);
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j = i + static_cast<int64_t>(mask.below(static_cast<uint64_t>(n - i)));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  out.indices.assign(order.begin(), order.begin() + k);
  std::sort(out.indices.begin(), out.indices.end());
  for (int64_t idx : out.indices) out.values.push_back(x[idx]);
  out.index_bits = 64;  // the seed alone reproduces the mask
  out.value_bits = static_cast<uint64_t>(k) * 32ull;
  return out;
}

EffectiveRank effective_rank(const ParamSet& delta, double tau, int r_max) {
  if (!(tau > 0.0) || !(tau < 1.0)) throw ValidationError("effective_rank: need 0 < tau < 1");
  if (r_max < 1) throw ValidationError("effective_rank: need r_max >= 1");
  EffectiveRank out;
  double weighted = 0.0;
  int64_t weight_total = 0;
  double energy_total = 0.0;
  for (int i = 0; i < delta.count(); ++i) {
    const Tensor& t = delta.tensor(i);
    if (t.ndim() != 2) continue;
    const std::vector<double> sv = singular_values(t);
    double total = 0.0;
    for (double s : sv) total += s * s;
    energy_total += total;
    int k = 1;
    if (total > 0.0) {
      double prefix = 0.0;
      for (size_t j = 0; j < sv.size(); ++j) {
        prefix += sv[j] * sv[j];
        if (prefix >= tau * total) {
          k = static_cast<int>(j) + 1;
          break;
        }
        k = static_cast<int>(j) + 1;
      }
    }
    out.per_tensor.emplace_back(delta.name(i), k);
    weighted += static_cast<double>(t.size()) * static_cast<double>(k);
    weight_total += t.size();
  }
  if (weight_total == 0 || energy_total == 0.0) {
    out.aggregate = 1;
    out.all_zero = (energy_total == 0.0);
    return out;
  }
  const int agg = static_cast<int>(std::ceil(weighted / static_cast<double>(weight_total)));
  out.aggregate = std::clamp(agg, 1, r_max);
  return out;
}

// ---------------------------------------------------------------------------
// wire format
// ---------------------------------------------------------------------------

namespace {

void pack_codes(std::vector<uint8_t>& out, const std::vector<int8_t>& codes, int qbits) {
  // q-bit two's complement, LSB-first.
  uint32_t bitbuf = 0;
  int bitcount = 0;
  const uint32_t mask = (1u << qbits) - 1u;
  for (int8_t c : codes) {
    bitbuf |= (static_cast<uint32_t>(static_cast<uint8_t>(c)) & mask) << bitcount;
    bitcount += qbits;
    while (bitcount >= 8) {
      out.push_back(static_cast<uint8_t>(bitbuf & 0xff));
      bitbuf >>= 8;
      bitcount -= 8;
    }
  }
  if (bitcount > 0) out.push_back(static_cast<uint8_t>(bitbuf & 0xff));
}

std::vector<int8_t> unpack_codes(wire::Reader& r, int64_t count, int qbits) {
  std::vector<int8_t> codes(static_cast<size_t>(count));
  const int64_t nbytes = (count * qbits + 7) / 8;
  const uint8_t* data = r.next(static_cast<size_t>(nbytes));
  uint32_t bitbuf = 0;
  int bitcount = 0;
  int64_t byte_pos = 0;
  const uint32_t mask = (1u << qbits) - 1u;
  const uint32_t sign_bit = 1u << (qbits - 1);
  for (int64_t i = 0; i < count; ++i) {
    while (bitcount < qbits) {
      bitbuf |= static_cast<uint32_t>(data[byte_pos++]) << bitcount;
      bitcount += 8;
    }
    uint32_t u = bitbuf & mask;
    bitbuf >>= qbits;
    bitcount -= qbits;
    int v = static_cast<int>(u);
    if (u & sign_bit) v -= (1 << qbits);
    codes[static_cast<size_t>(i)] = static_cast<int8_t>(v);
  }
  return codes;
}

}  // namespace

std::vector<uint8_t> serialize(const CompressedDelta& cd) {
  std::vector<uint8_t> out;
  wire::put_u32(out, 0x43584c44u);  // "DLXC"
  wire::put_u32(out, 1u);
  wire::put_u32(out, static_cast<uint32_t>(cd.rank));
  wire::put_u32(out, static_cast<uint32_t>(cd.qbits));
  wire::put_u32(out, static_cast<uint32_t>(cd.tensors.size()));
  for (const TensorPayload& t : cd.tensors) {
    wire::put_string(out, t.name);
    wire::put_u8(out, static_cast<uint8_t>(t.kind));
    wire::put_u8(out, static_cast<uint8_t>(t.shape.size()));
    for (int64_t d : t.shape) wire::put_u64(out, static_cast<uint64_t>(d));
    wire::put_u32(out, static_cast<uint32_t>(t.rank));
    wire::put_u32(out, static_cast<uint32_t>(t.qbits));
    switch (t.kind) {
      case PayloadKind::LowRankQuant:
        pack_codes(out, t.p_codes, t.qbits);
        pack_codes(out, t.q_codes, t.qbits);
        for (float s : t.p_scales) wire::put_f32(out, s);
        for (float s : t.q_scales) wire::put_f32(out, s);
        break;
      case PayloadKind::DenseQuant:
        pack_codes(out, t.dense.codes, t.qbits);
        wire::put_f32(out, t.dense.scale);
        break;
      case PayloadKind::RawDense:
        for (float v : t.raw) wire::put_f32(out, v);
        break;
    }
  }
  return out;
}

CompressedDelta parse_compressed(const std::vector<uint8_t>& bytes) {
  wire::Reader r(bytes.data(), bytes.size());
  if (r.u32() != 0x43584c44u) throw FormatError("bad compressed payload magic");
  if (r.u32() != 1u) throw FormatError("unsupported compressed payload version");
  CompressedDelta cd;
  cd.rank = static_cast<int>(r.u32());
  cd.qbits = static_cast<int>(r.u32());
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    TensorPayload t;
    t.name = r.string();
    t.kind = static_cast<PayloadKind>(r.u8());
    const int ndim = r.u8();
    int64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<int64_t>(r.u64()));
      if (t.shape.back() <= 0) throw FormatError("non-positive dimension in payload");
      n *= t.shape.back();
    }
    t.rank = static_cast<int>(r.u32());
    t.qbits = static_cast<int>(r.u32());
    switch (t.kind) {
      case PayloadKind::LowRankQuant: {
        if (ndim != 2) throw FormatError("low-rank payload must be 2-D");
        if (t.qbits < 2 || t.qbits > 8) throw FormatError("bad qbits in payload");
        if (t.rank < 1 || t.rank > std::min(t.shape[0], t.shape[1]))
          throw FormatError("bad rank in payload");
        t.p_codes = unpack_codes(r, t.shape[0] * t.rank, t.qbits);
        t.q_codes = unpack_codes(r, t.shape[1] * t.rank, t.qbits);
        t.p_scales.resize(static_cast<size_t>(t.rank));
        t.q_scales.resize(static_cast<size_t>(t.rank));
        for (float& s : t.p_scales) s = r.f32();
        for (float& s : t.q_scales) s = r.f32();
        break;
      }
      case PayloadKind::DenseQuant: {
        if (t.qbits < 2 || t.qbits > 8) throw FormatError("bad qbits in payload");
        t.dense.codes = unpack_codes(r, n, t.qbits);
        t.dense.scale = r.f32();
        break;
      }
      case PayloadKind::RawDense: {
        t.raw.resize(static_cast<size_t>(n));
        for (float& v : t.raw) v = r.f32();
        break;
      }
      default:
        throw FormatError("unknown payload kind");
    }
    cd.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes in compressed payload");
  cd.payload_bits = payload_bits_formula(cd);
  return cd;
}

}  // namespace dilocox
