#pragma once

// Little-endian primitive encoding shared by the dataset and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "xlsum/errors.hpp"

namespace xlsum::io {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(std::string_view raw) {
    out_.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  }
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  void little_endian(std::uint64_t v, int width) {
    char buf[8];
    for (int i = 0; i < width; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(buf, width);
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string bytes(std::size_t n) {
    std::string raw(n, '\0');
    in_.read(raw.data(), static_cast<std::streamsize>(n));
    check();
    return raw;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  std::uint64_t u64() { return little_endian(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::uint64_t little_endian(int width) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), width);
    check();
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  void check() {
    if (!in_) throw FormatError("unexpected end of file");
  }
  std::istream& in_;
};

}  // namespace xlsum::io
