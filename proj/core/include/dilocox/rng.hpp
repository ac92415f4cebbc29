#pragma once

#include <cstdint>
#include <initializer_list>

namespace dilocox {

// Counter-seeded splitmix64 stream. A (seed, stream_id) pair fully determines
// the value sequence; the generator uses only integer arithmetic and bit
// operations, so sequences are identical across platforms.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id) {
    state_ = mix(seed ^ 0x9e3779b97f4a7c15ull);
    state_ = mix(state_ ^ mix(stream_id + 0xbf58476d1ce4e5b9ull));
  }

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0, 1) with 24 random bits.
  float next_unit_f() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * next_unit_f(); }

  // Unbiased integer in [0, n) via rejection.
  uint64_t below(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = ~0ull - (~0ull % n);
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Approximate standard normal as a 12-term Irwin-Hall sum. Pure adds keep
  // the sequence bit-identical across platforms.
  float normal() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += next_unit();
    return static_cast<float>(s - 6.0);
  }

 private:
  uint64_t state_ = 0;
};

// Collapses a tuple of ids (worker, purpose, round, ...) into one stream id.
inline uint64_t stream_key(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x100000001b3ull;
  for (uint64_t p : parts) h = RngStream::mix(h ^ RngStream::mix(p));
  return h;
}

}  // namespace dilocox
