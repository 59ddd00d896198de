#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmixseq/rng.hpp"

namespace gmixseq {

// Little-endian binary container primitives shared by the dataset and
// checkpoint formats. Payload bytes are accumulated in memory and written in
// one shot with a trailing FNV-1a checksum, so a truncated or corrupt file is
// always detected before any value is used.

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::string& path);

class BinaryWriter {
 public:
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void str(const std::string& s);
  void matrix(const Matrix& m);
  void named_matrices(const std::map<std::string, Matrix>& mats);

  /// Writes magic + payload + checksum; throws std::runtime_error on I/O failure.
  void write_file(const std::string& path, const char magic[8]) const;

  const std::vector<unsigned char>& payload() const { return buf_; }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<unsigned char> buf_;
};

class BinaryReader {
 public:
  /// Loads the whole file, checks magic and checksum before any decode.
  BinaryReader(const std::string& path, const char magic[8]);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::string str();
  Matrix matrix();
  std::map<std::string, Matrix> named_matrices();

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw std::runtime_error("binary container: record extends past end of payload");
  }
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace gmixseq
