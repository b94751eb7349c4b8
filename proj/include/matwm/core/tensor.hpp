#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace matwm {

// 64-byte-aligned storage so every tensor lands on the same SIMD boundary no
// matter where the heap places it. Eigen's vectorized kernels then take the
// same code path for the same shapes, which keeps results bit-reproducible
// across re-evaluations and process restarts (malloc's default 16-byte
// alignment lets the packet prologue length vary with the address, which
// perturbs summation order by a few ulps).
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(alignment));
  }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const noexcept {
    return false;
  }
};

// Dense row-major tensor of rank <= 4. Most ops view it as a 2-D matrix
// [rows() x cols()] where cols() is the trailing dimension; rank-3 shapes are
// used by the batched matmul paths.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel(shape_), T(0));
  }

  Tensor(std::vector<int> shape, const std::vector<T>& data) : shape_(std::move(shape)) {
    if (static_cast<int64_t>(data.size()) != numel(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
    data_.assign(data.begin(), data.end());
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  static Tensor row(std::initializer_list<T> values) {
    return Tensor({1, static_cast<int>(values.size())}, std::vector<T>(values));
  }

  static int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  bool defined() const { return !shape_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  // Trailing dimension; the 2-D matrix view is [rows x cols].
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }
  int rows() const {
    if (shape_.empty()) return 0;
    int64_t r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return static_cast<int>(r);
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at2(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  const T& at2(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

  MatMap mat() { return MatMap(data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data(), rows(), cols()); }
  VecMap vec() { return VecMap(data(), size()); }
  ConstVecMap vec() const { return ConstVecMap(data(), size()); }

  // Matrix view of an arbitrary contiguous block (used by batched ops).
  MatMap block_mat(int64_t offset, int r, int c) { return MatMap(data() + offset, r, c); }
  ConstMatMap block_mat(int64_t offset, int r, int c) const {
    return ConstMatMap(data() + offset, r, c);
  }

  // Reinterprets the shape in place; element count must match.
  Tensor& set_shape(std::vector<int> shape) {
    if (numel(shape) != size()) throw std::invalid_argument("Tensor::set_shape: numel mismatch");
    shape_ = std::move(shape);
    return *this;
  }

  Tensor reshaped(std::vector<int> shape) const {
    Tensor t = *this;
    t.set_shape(std::move(shape));
    return t;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    for (const T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  std::vector<int> shape_;
  Storage data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace matwm
