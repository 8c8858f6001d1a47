#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace hallu::io {

// Explicit little-endian encoding, independent of host byte order.

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw std::runtime_error("unexpected end of file");
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

inline std::string get_string(std::istream& in, std::size_t max_len = 1 << 20) {
  const std::uint32_t n = get_u32(in);
  if (n > max_len) throw std::runtime_error("string field too long");
  std::string s(n, '\0');
  read_exact(in, s.data(), n);
  return s;
}

}  // namespace hallu::io
