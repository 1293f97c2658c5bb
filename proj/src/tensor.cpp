#include "hetmem/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <numeric>

#include "hetmem/errors.hpp"

namespace hetmem {

namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void AllocationTracker::on_allocate(std::size_t bytes) noexcept {
  const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void AllocationTracker::on_deallocate(std::size_t bytes) noexcept {
  g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

std::size_t AllocationTracker::current_bytes() noexcept {
  return g_current.load(std::memory_order_relaxed);
}

std::size_t AllocationTracker::peak_bytes() noexcept {
  return g_peak.load(std::memory_order_relaxed);
}

void AllocationTracker::reset_peak() noexcept {
  g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

template <class T>
Tensor<T> Tensor<T>::uninitialized(Shape shape) {
  Tensor t;
  t.data_ = Storage(numel(shape));
  t.shape_ = std::move(shape);
  return t;
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::span<const T> values) : shape_(std::move(shape)) {
  if (numel(shape_) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  data_.assign(values.begin(), values.end());
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::initializer_list<T> values)
    : Tensor(std::move(shape), std::span<const T>(values.begin(), values.size())) {}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw ShapeError("reshape: " + to_string(shape_) + " -> " + to_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace hetmem
