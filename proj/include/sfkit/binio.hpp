#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sfkit/errors.hpp"

// Little-endian primitives shared by the SFKF/SFKC/SFKE/SFKI formats.
// The host is assumed little-endian; a static check guards the assumption.

namespace sfk::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
  if (!os) throw DataError("write failed");
}

inline void read_bytes(std::istream& is, void* p, size_t n,
                       const std::string& what) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  if (size_t(is.gcount()) != n)
    throw DataError("truncated file while reading " + what);
}

inline void write_u32(std::ostream& os, uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u16(std::ostream& os, uint16_t v) { write_bytes(os, &v, 2); }
inline void write_u8(std::ostream& os, uint8_t v) { write_bytes(os, &v, 1); }
inline void write_f32(std::ostream& os, float v) { write_bytes(os, &v, 4); }

inline uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v;
  read_bytes(is, &v, 4, what);
  return v;
}
inline uint16_t read_u16(std::istream& is, const std::string& what) {
  uint16_t v;
  read_bytes(is, &v, 2, what);
  return v;
}
inline uint8_t read_u8(std::istream& is, const std::string& what) {
  uint8_t v;
  read_bytes(is, &v, 1, what);
  return v;
}

inline void write_magic(std::ostream& os, const char magic[4]) {
  write_bytes(os, magic, 4);
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const std::string& path) {
  char got[4];
  read_bytes(is, got, 4, "magic");
  if (std::memcmp(got, magic, 4) != 0)
    throw DataError("bad magic in '" + path + "': expected \"" +
                    std::string(magic, 4) + "\", got \"" + std::string(got, 4) +
                    "\"");
}

inline void write_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw DataError("string too long for u16 length");
  write_u16(os, uint16_t(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const std::string& what) {
  const uint16_t n = read_u16(is, what + " length");
  std::string s(n, '\0');
  if (n > 0) read_bytes(is, s.data(), n, what);
  return s;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "' for reading");
  return is;
}

}  // namespace sfk::binio
