#pragma once

#include <Eigen/Core>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "oat/common.hpp"

namespace oat {

/// Little-endian binary writer over an in-memory buffer; doubles round-trip
/// bit-exactly.
class BinWriter {
 public:
  void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void i64(int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void mat(const Eigen::MatrixXd& m) {
    u32(static_cast<uint32_t>(m.rows()));
    u32(static_cast<uint32_t>(m.cols()));
    raw(m.data(), sizeof(double) * m.size());
  }
  void vec(const Eigen::VectorXd& v) {
    u32(static_cast<uint32_t>(v.size()));
    raw(v.data(), sizeof(double) * v.size());
  }
  void dvec(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), sizeof(double) * v.size());
  }

  const std::string& buffer() const { return buf_; }
  void write_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write: " + path);
    f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!f) throw DataError("short write: " + path);
  }

 private:
  std::string buf_;
};

class BinReader {
 public:
  BinReader(const void* data, size_t n, std::string where)
      : p_(static_cast<const uint8_t*>(data)), n_(n), where_(std::move(where)) {}

  static std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }

  void raw(void* out, size_t n) {
    need(n);
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  int64_t i64() {
    int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  Eigen::MatrixXd mat() {
    uint32_t r = u32(), c = u32();
    Eigen::MatrixXd m(r, c);
    raw(m.data(), sizeof(double) * m.size());
    return m;
  }
  Eigen::VectorXd vec() {
    uint32_t n = u32();
    Eigen::VectorXd v(n);
    raw(v.data(), sizeof(double) * v.size());
    return v;
  }
  std::vector<double> dvec() {
    uint64_t n = u64();
    std::vector<double> v(n);
    raw(v.data(), sizeof(double) * v.size());
    return v;
  }

  size_t pos() const { return pos_; }
  size_t remaining() const { return n_ - pos_; }
  void seek(size_t pos) { pos_ = pos; }

 private:
  void need(size_t k) const {
    if (pos_ + k > n_) throw DataError("truncated data: " + where_);
  }
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
  std::string where_;
};

}  // namespace oat
