#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "tofvae/errors.hpp"

// Little-endian byte (de)serialization, independent of host byte order.
namespace tofvae::binio {

inline void put_u8(std::string& out, uint8_t v) {
  out.push_back(static_cast<char>(v));
}

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  Reader(const uint8_t* data, size_t size, std::string what)
      : p_(data), n_(size), what_(std::move(what)) {}

  size_t offset() const { return off_; }
  size_t remaining() const { return n_ - off_; }

  void need(size_t k) const {
    if (off_ + k > n_)
      throw Error::data(what_ + ": truncated (need " + std::to_string(k) +
                        " bytes at offset " + std::to_string(off_) + ", have " +
                        std::to_string(n_ - off_) + ")");
  }

  uint8_t u8() {
    need(1);
    return p_[off_++];
  }

  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p_[off_]) |
                 static_cast<uint16_t>(p_[off_ + 1]) << 8;
    off_ += 2;
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
  }

  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  void bytes(void* dst, size_t k) {
    need(k);
    std::memcpy(dst, p_ + off_, k);
    off_ += k;
  }

  std::string str() {
    const uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + off_), len);
    off_ += len;
    return s;
  }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t off_ = 0;
  std::string what_;
};

}  // namespace tofvae::binio
