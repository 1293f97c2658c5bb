#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>

#include "hetmem/tensor.hpp"

namespace hetmem {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape that issued it is alive.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of differentiable operations.
///
/// Nodes are appended in execution order, which is a topological order of
/// the computation graph; backward() walks them in reverse. A node only
/// keeps a backward closure when one of its inputs requires a gradient, so
/// evaluation-only passes cost nothing beyond the forward values.
///
/// A tape is single-threaded. Independent tapes may live on separate threads.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that owns a copy of its value.
  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  // Leaf that refers to an external tensor, which must outlive the tape and
  // stay unmodified while the tape is in use.
  Var<T> borrow(const Tensor<T>& value, bool requires_grad = false);

  // Appends an op result. `fn` is dropped unless a parent requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<std::size_t> parents, BackwardFn fn);
  Var<T> record(Tensor<T> value, std::span<const std::size_t> parents, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return *nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  /// Clears gradients from any previous call first, so repeated calls are
  /// bit-identical. Throws ShapeError for a non-scalar loss.
  void backward(Var<T> loss);

  /// Gradient accumulated for `v`; zeros when nothing reached it.
  Tensor<T> grad(Var<T> v) const;

  // For backward closures.
  std::span<const T> upstream(std::size_t id) const { return nodes_[id].grad.data(); }
  std::span<T> grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* value = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_leaf = true;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace hetmem
