#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace timnet::io {

inline void write_u16_le(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  write_u32_le(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  write_u32_le(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f64_le(std::ostream& os, double v) {
  write_u64_le(os, std::bit_cast<std::uint64_t>(v));
}

inline bool read_u16_le(std::istream& is, std::uint16_t& v) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) return false;
  v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  return true;
}

inline bool read_u32_le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline bool read_u64_le(std::istream& is, std::uint64_t& v) {
  std::uint32_t lo = 0, hi = 0;
  if (!read_u32_le(is, lo) || !read_u32_le(is, hi)) return false;
  v = static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
  return true;
}

inline bool read_f64_le(std::istream& is, double& v) {
  std::uint64_t u = 0;
  if (!read_u64_le(is, u)) return false;
  v = std::bit_cast<double>(u);
  return true;
}

}  // namespace timnet::io
