#pragma once

// Little-endian binary files with a 16-byte header: 8-byte magic, u32
// format version, u32 reserved (zero).

#include "acrpose/autodiff/tensor.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acrpose {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

namespace io {

// Nearest f32 value. The volatile store stops g++ 11 at -O3 from folding
// vectorized double->float->double round trips into a no-op.
inline double round_f32(double v) {
  volatile float f = static_cast<float>(v);
  return f;
}

inline Matrix round_f32(const Matrix& m) { return m.unaryExpr([](double v) { return round_f32(v); }); }

template <class U>
void put_le(std::vector<char>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

// Buffers the whole file and writes it to `path.tmp`, then renames, so a
// reader never sees a partial file.
class Writer {
 public:
  Writer(std::filesystem::path path, const char (&magic)[8], std::uint32_t version) : path_(std::move(path)) {
    buf_.insert(buf_.end(), magic, magic + 8);
    u32(version);
    u32(0);
  }
  ~Writer() {
    if (!closed_) {
      try {
        close();
      } catch (...) {
      }
    }
  }
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void u32(std::uint32_t v) { put_le(buf_, v); }
  void u64(std::uint64_t v) { put_le(buf_, v); }
  void i32(std::int32_t v) { put_le(buf_, static_cast<std::uint32_t>(v)); }
  void f32(double v) { put_le(buf_, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  // Row-major f32 values, no shape prefix.
  void matrix(const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) f32(m(r, c));
    }
  }

  void close() {
    closed_ = true;
    std::filesystem::path tmp = path_;
    tmp += ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
      f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path_.string() + ": " + ec.message());
  }

 private:
  std::filesystem::path path_;
  std::vector<char> buf_;
  bool closed_ = false;
};

class Reader {
 public:
  Reader(std::filesystem::path path, const char (&magic)[8], std::uint32_t version) : path_(std::move(path)) {
    std::ifstream f(path_, std::ios::binary);
    if (!f) throw IoError("cannot open " + path_.string());
    buf_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    if (buf_.size() < 16 || std::memcmp(buf_.data(), magic, 8) != 0) throw IoError(path_.string() + ": bad magic");
    pos_ = 8;
    std::uint32_t v = u32();
    if (v != version) {
      throw VersionError(path_.string() + ": format version " + std::to_string(v) + ", expected " +
                         std::to_string(version));
    }
    u32();
  }

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  double f32() { return static_cast<double>(std::bit_cast<float>(get<std::uint32_t>())); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    if (rows < 0 || cols < 0) throw IoError(path_.string() + ": negative matrix shape");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f32();
    }
    return m;
  }

  void expect_end() const {
    if (pos_ != buf_.size()) {
      throw IoError(path_.string() + ": " + std::to_string(buf_.size() - pos_) + " trailing bytes");
    }
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError(path_.string() + ": truncated file");
  }
  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::filesystem::path path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace io
}  // namespace acrpose
