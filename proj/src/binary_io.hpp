#pragma once

// Little-endian primitives shared by the checkpoint and dataset containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "alood/error.hpp"

namespace alood::detail {

/// Accumulates little-endian data in memory.
class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) f64(v[i]);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::string& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw DataError("write failed on " + path);
  }

 private:
  template <typename T>
  void le(T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    bytes(buf, sizeof(T));
  }

  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open " + path);
  }

  std::uint64_t offset() const { return offset_; }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  void bytes(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      fail(std::string("unexpected end of file while reading ") + what);
    }
    offset_ += n;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  void f64s(double* v, std::size_t n, const char* what) {
    for (std::size_t i = 0; i < n; ++i) v[i] = f64(what);
  }
  std::string str(const char* what, std::uint32_t max_len = 1u << 20) {
    const auto n = u32(what);
    if (n > max_len) fail(std::string("implausible length for ") + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw DataError(path_ + ": " + message + " at byte offset " + std::to_string(offset_));
  }

 private:
  template <typename T>
  T le(const char* what) {
    unsigned char buf[sizeof(T)];
    bytes(buf, sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }

  std::string path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace alood::detail
