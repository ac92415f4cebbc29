#pragma once

// Little-endian read/write helpers shared by the checkpoint and compressed
// payload formats.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dilocox/errors.hpp"

namespace dilocox::wire {

inline void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_string(std::vector<uint8_t>& out, const std::string& s) {
  if (s.size() > 0xffff) throw FormatError("string too long for wire format");
  put_u16(out, static_cast<uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

  uint8_t u8() { return next(1)[0]; }
  uint16_t u16() {
    const uint8_t* p = next(2);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    const uint8_t* p = next(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const uint8_t* p = next(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string string() {
    const uint16_t n = u16();
    const uint8_t* p = next(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const uint8_t* next(size_t n) {
    if (pos_ + n > size_) throw FormatError("truncated payload");
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == size_; }
  size_t pos() const { return pos_; }

 private:
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

}  // namespace dilocox::wire
