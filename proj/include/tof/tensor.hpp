#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tof/errors.hpp"

namespace tof {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocation, so vectorized kernels see the same
/// alignment (and reduce in the same order) on every run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major n-dimensional array with value semantics.
template <class T>
class Array {
 public:
  using value_type = T;

  Array() = default;
  explicit Array(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Array(Shape shape, const std::vector<T>& values)
      : Array(std::move(shape), Buffer<T>(values.begin(), values.end())) {}
  Array(Shape shape, Buffer<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("values", "expected " + std::to_string(element_count(shape_)) +
                                     " elements for shape " + shape_to_string(shape_) +
                                     ", got " + std::to_string(data_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  Buffer<T>& storage() noexcept { return data_; }
  const Buffer<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... Idx>
  T& operator()(Idx... idx) noexcept {
    return data_[offset(idx...)];
  }
  template <class... Idx>
  const T& operator()(Idx... idx) const noexcept {
    return data_[offset(idx...)];
  }

  template <class... Idx>
  std::size_t offset(Idx... idx) const noexcept {
    assert(sizeof...(Idx) == shape_.size());
    std::size_t off = 0;
    std::size_t axis = 0;
    ((off = off * shape_[axis] + static_cast<std::size_t>(idx), ++axis), ...);
    return off;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with the same element count.
  Array reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("reshape", shape_to_string(shape_) + " -> " + shape_to_string(shape));
    }
    return Array(std::move(shape), data_);
  }

  friend bool operator==(const Array&, const Array&) = default;

  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  Shape shape_;
  Buffer<T> data_;
};

using Tensor = Array<double>;
using FloatArray = Array<float>;
using ByteArray = Array<std::uint8_t>;

/// Throws ShapeError naming `input` unless `a` has exactly `expected` shape.
template <class T>
void require_shape(const Array<T>& a, const Shape& expected, const std::string& input) {
  if (a.shape() != expected) {
    throw ShapeError(input, "expected " + shape_to_string(expected) + ", got " +
                                shape_to_string(a.shape()));
  }
}

template <class T>
void require_rank(const Array<T>& a, std::size_t rank, const std::string& input) {
  if (a.rank() != rank) {
    throw ShapeError(input, "expected rank " + std::to_string(rank) + ", got " +
                                shape_to_string(a.shape()));
  }
}

template <class To, class From>
Array<To> cast_array(const Array<From>& a) {
  std::vector<To> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<To>(a[i]);
  return Array<To>(a.shape(), std::move(out));
}

bool all_finite(std::span<const double> v);
bool all_finite(std::span<const float> v);

}  // namespace tof
