#include "gmixseq/io.hpp"

#include <cstring>

namespace gmixseq {

namespace {

// The on-disk layout is little-endian. Encode integers byte by byte so the
// writer is correct regardless of host order.
template <typename T>
void put_le(std::vector<unsigned char>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::vector<unsigned char>& buf, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[pos + i]) << (8 * i);
  return v;
}

}  // namespace

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for hashing: " + path);
  std::uint64_t h = kFnvOffset;
  char chunk[65536];
  while (in) {
    in.read(chunk, sizeof(chunk));
    h = fnv1a(chunk, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

void BinaryWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(buf_, v); }

void BinaryWriter::f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  u64(bits);
}

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  raw(s.data(), s.size());
}

void BinaryWriter::matrix(const Matrix& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
}

void BinaryWriter::named_matrices(const std::map<std::string, Matrix>& mats) {
  u64(mats.size());
  for (const auto& [name, m] : mats) {
    str(name);
    matrix(m);
  }
}

void BinaryWriter::write_file(const std::string& path, const char magic[8]) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(magic, 8);
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  std::vector<unsigned char> tail;
  put_le(tail, fnv1a(buf_.data(), buf_.size()));
  out.write(reinterpret_cast<const char*>(tail.data()), static_cast<std::streamsize>(tail.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

BinaryReader::BinaryReader(const std::string& path, const char magic[8]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<unsigned char> all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 16) throw std::runtime_error("file too short: " + path);
  if (std::memcmp(all.data(), magic, 8) != 0)
    throw std::runtime_error("bad magic bytes (wrong file type): " + path);
  buf_.assign(all.begin() + 8, all.end() - 8);
  const std::uint64_t stored = get_le<std::uint64_t>(all, all.size() - 8);
  const std::uint64_t actual = fnv1a(buf_.data(), buf_.size());
  if (stored != actual) throw std::runtime_error("checksum mismatch (truncated or corrupt file): " + path);
}

std::uint8_t BinaryReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t BinaryReader::u32() {
  need(4);
  auto v = get_le<std::uint32_t>(buf_, pos_);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  auto v = get_le<std::uint64_t>(buf_, pos_);
  pos_ += 8;
  return v;
}

double BinaryReader::f64() {
  std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

Matrix BinaryReader::matrix() {
  const auto rows = static_cast<Eigen::Index>(u64());
  const auto cols = static_cast<Eigen::Index>(u64());
  if (rows < 0 || cols < 0 || (rows > 0 && cols > 0 && static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) > (1ULL << 32)))
    throw std::runtime_error("binary container: implausible matrix dimensions");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f64();
  return m;
}

std::map<std::string, Matrix> BinaryReader::named_matrices() {
  std::map<std::string, Matrix> mats;
  const std::uint64_t n = u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = str();
    mats[name] = matrix();
  }
  return mats;
}

}  // namespace gmixseq
