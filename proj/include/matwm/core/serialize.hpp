#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "matwm/core/rng.hpp"
#include "matwm/core/tensor.hpp"

namespace matwm {

// Minimal little-endian binary archive. Every section is preceded by a short
// string tag so a mismatched read fails loudly instead of silently skewing.

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}

  void raw(const void* p, size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  void u8(uint8_t v) { raw(&v, sizeof v); }
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void i32(int32_t v) { raw(&v, sizeof v); }
  void i64(int64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  void tag(const std::string& t) { str(t); }

  template <typename T>
  void scalar_vec(const std::vector<T>& v) {
    u64(v.size());
    if (!v.empty()) raw(v.data(), v.size() * sizeof(T));
  }

  template <typename T>
  void scalar(T v) {
    static_assert(std::is_arithmetic_v<T>);
    raw(&v, sizeof v);
  }

  template <typename T>
  void tensor(const Tensor<T>& t) {
    u32(static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) i32(t.dim(i));
    if (t.size() > 0) raw(t.data(), static_cast<size_t>(t.size()) * sizeof(T));
  }

  void rng(const Rng& r) {
    auto s = r.state();
    for (int i = 0; i < 4; ++i) u64(s.s[i]);
    u8(s.has_spare ? 1 : 0);
    f64(s.spare);
  }

 private:
  std::ostream& os_;
};

class BinReader {
 public:
  explicit BinReader(std::istream& is) : is_(is) {}

  void raw(void* p, size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is_) throw std::runtime_error("checkpoint: truncated read");
  }

  uint8_t u8() { uint8_t v; raw(&v, sizeof v); return v; }
  uint32_t u32() { uint32_t v; raw(&v, sizeof v); return v; }
  uint64_t u64() { uint64_t v; raw(&v, sizeof v); return v; }
  int32_t i32() { int32_t v; raw(&v, sizeof v); return v; }
  int64_t i64() { int64_t v; raw(&v, sizeof v); return v; }
  float f32() { float v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }

  std::string str() {
    const uint32_t n = u32();
    if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (n) raw(s.data(), n);
    return s;
  }

  void expect_tag(const std::string& want) {
    const std::string got = str();
    if (got != want)
      throw std::runtime_error("checkpoint: expected section '" + want + "', found '" + got + "'");
  }

  template <typename T>
  std::vector<T> scalar_vec() {
    const uint64_t n = u64();
    if (n > (1ull << 32)) throw std::runtime_error("checkpoint: implausible vector length");
    std::vector<T> v(n);
    if (n) raw(v.data(), n * sizeof(T));
    return v;
  }

  template <typename T>
  T scalar() {
    static_assert(std::is_arithmetic_v<T>);
    T v;
    raw(&v, sizeof v);
    return v;
  }

  template <typename T>
  Tensor<T> tensor() {
    const uint32_t rank = u32();
    if (rank > 4) throw std::runtime_error("checkpoint: implausible tensor rank");
    if (rank == 0) return Tensor<T>{};  // undefined tensor round-trips as such
    std::vector<int> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = i32();
    Tensor<T> t(shape);
    if (t.size() > 0) raw(t.data(), static_cast<size_t>(t.size()) * sizeof(T));
    return t;
  }

  void rng(Rng& r) {
    Rng::State s;
    for (int i = 0; i < 4; ++i) s.s[i] = u64();
    s.has_spare = u8() != 0;
    s.spare = f64();
    r.set_state(s);
  }

 private:
  std::istream& is_;
};

}  // namespace matwm
