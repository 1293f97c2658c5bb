#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace hetmem {

enum class DType { fp32, fp64 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::fp32; }
template <>
constexpr DType dtype_of<double>() { return DType::fp64; }

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Process-wide accounting of bytes held by tensor storage.
///
/// Every Tensor buffer is allocated through TrackingAllocator, so the
/// counters cover activations, gradients, parameters, optimizer state and
/// memory caches alike. Callers that want a narrower figure (e.g. only the
/// bytes allocated during one training step) take a baseline with
/// current_bytes() and call reset_peak() before the region of interest.
class AllocationTracker {
 public:
  static void on_allocate(std::size_t bytes) noexcept;
  static void on_deallocate(std::size_t bytes) noexcept;
  static std::size_t current_bytes() noexcept;
  static std::size_t peak_bytes() noexcept;
  // Sets the peak to the current level.
  static void reset_peak() noexcept;
};

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    AllocationTracker::on_allocate(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    AllocationTracker::on_deallocate(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  // Default-initializes, so sized construction of arithmetic storage skips
  // the zero fill; Tensor always passes an explicit value when it needs one.
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

/// Dense row-major array. Zero-extent dimensions are allowed so that an
/// empty memory cache is an ordinary tensor.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, TrackingAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::span<const T> values);
  Tensor(Shape shape, std::initializer_list<T> values);
  // Storage with indeterminate values, for outputs that are fully written.
  static Tensor uninitialized(Shape shape);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  static constexpr DType dtype() noexcept { return dtype_of<T>(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const T* ptr() const noexcept { return data_.data(); }
  T* ptr() noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Same values under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  std::size_t bytes() const noexcept { return data_.size() * sizeof(T); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{0};
  Storage data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace hetmem
