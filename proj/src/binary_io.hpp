#pragma once

// Little-endian byte encoding shared by the AVF1 and RJAC formats.

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "rja/core/error.hpp"
#include "rja/core/tensor.hpp"

namespace rja::binary {

class Writer {
 public:
  void raw(const std::string& bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }

  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v & 0xff));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }

  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
  }

  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  void matrix(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f32(m(i, j));
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) throw FormatError("truncated file while reading " + what, pos_);
  }

  std::uint16_t u16(const std::string& what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(k)];
    pos_ += 4;
    return v;
  }

  double f32(const std::string& what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }

  std::string raw(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::string text(const std::string& what) {
    const std::uint32_t n = u32(what + " length");
    return raw(n, what);
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    need(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 4, what);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f32(what);
    return m;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace rja::binary
