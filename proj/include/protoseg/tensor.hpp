#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "protoseg/errors.hpp"

namespace protoseg {

using Shape = std::vector<int>;

// Every buffer starts on a 64-byte boundary. Vectorized GEMM peels a
// different number of leading elements depending on alignment, which would
// change float summation order from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string shape_str(const Shape& shape);

// Dense row-major array. Spatial maps are laid out H x W x C.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_dims();
  }
  Tensor(Shape shape, const std::vector<T>& values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    check_dims();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor of shape " + shape_str(shape_) + " given " + std::to_string(data_.size()) +
                       " values");
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Views; not available on temporaries, whose storage would dangle.
  std::span<T> values() & { return data_; }
  std::span<const T> values() const& { return data_; }
  std::span<const T> values() const&& = delete;
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // (row, col, channel) access for rank-3 maps.
  T& at(int r, int c, int ch) { return data_[index(r, c, ch)]; }
  const T& at(int r, int c, int ch) const { return data_[index(r, c, ch)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(c)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(ch);
  }
  void check_dims() const {
    for (int d : shape_) {
      if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  AlignedVector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t);

// Throws ShapeError naming `what` unless `a` has the given shape.
void expect_shape(const Shape& actual, const Shape& expected, const char* what);
void expect_rank(const Shape& actual, int rank, const char* what);

}  // namespace protoseg
