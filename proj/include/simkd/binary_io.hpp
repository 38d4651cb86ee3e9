#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "simkd/error.hpp"
#include "simkd/rng.hpp"

namespace simkd {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Little-endian byte sink.
class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  /// Appends FNV-1a of everything written so far.
  void seal() { put<std::uint64_t>(fnv1a64(bytes_.data(), bytes_.size())); }

  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

/// Bounds-checked little-endian reader; every overrun is a CorruptionError.
class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  const unsigned char* take(std::size_t n) {
    need(n);
    const unsigned char* out = p_ + pos_;
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > n_ - pos_) throw CorruptionError("unexpected end of data");
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

/// Checks the trailing FNV-1a and returns the payload length before it.
inline std::size_t verify_sealed(const std::vector<unsigned char>& bytes, const char* what) {
  if (bytes.size() < 8) throw CorruptionError(std::string(what) + ": file too short");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(bytes.data(), body)) throw CorruptionError(std::string(what) + ": checksum mismatch");
  return body;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write to '" + path + "' failed");
}

}  // namespace simkd
