#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "glann/errors.hpp"

namespace glann {

// 64-byte-aligned storage so SIMD peeling inside Eigen never depends on
// where the allocator happened to place a buffer; this is what makes two
// identically seeded runs bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, size_t n) { ::operator delete(p, n * sizeof(T), kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using FloatVec = std::vector<float, AlignedAllocator<float>>;

// Dense row-major float32 tensor. Deliberately minimal: shape + flat storage.
// Heavier math goes through Eigen::Map views of the flat buffer.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0f);
  }

  Tensor(std::vector<int64_t> shape, const std::vector<float>& data) : shape_(std::move(shape)) {
    if (numel_of(shape_) != static_cast<int64_t>(data.size()))
      throw ArgumentError("tensor data size does not match shape");
    data_.assign(data.begin(), data.end());
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, float v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  FloatVec& vec() { return data_; }
  const FloatVec& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // In-place reshape; element count must be preserved.
  void reshape(std::vector<int64_t> shape) {
    if (numel_of(shape) != numel())
      throw ArgumentError("reshape changes element count: " + shape_str(shape_) +
                          " -> " + shape_str(shape));
    shape_ = std::move(shape);
  }

  Tensor reshaped(std::vector<int64_t> shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const { return shape_str(shape_); }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw ArgumentError("negative dimension in shape");
      n *= d;
    }
    return n;
  }

  static std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }

 private:
  std::vector<int64_t> shape_;
  FloatVec data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ArgumentError(std::string(what) + ": shape mismatch " + a.shape_string() +
                        " vs " + b.shape_string());
}

}  // namespace glann
