#include "hetmem/tape.hpp"

#include "hetmem/errors.hpp"

namespace hetmem {

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.value = &n.owned;
  n.requires_grad = requires_grad;
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::borrow(const Tensor<T>& value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.value = &value;
  n.requires_grad = requires_grad;
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<std::size_t> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const std::size_t>(parents.begin(), parents.size()),
                std::move(fn));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const std::size_t> parents, BackwardFn fn) {
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.value = &n.owned;
  n.is_leaf = false;
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
std::span<T> Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value->shape());
    n.has_grad = true;
  }
  return n.grad.data();
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.valid() && &loss.tape() != this) {
    throw std::invalid_argument("backward: loss belongs to a different tape");
  }
  const Tensor<T>& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(lv.shape()));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor<T>();
    n.has_grad = false;
  }
  if (!requires_grad(loss.id())) return;
  grad_buffer(loss.id())[0] = T(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, id);
    // Interior gradients are dead once propagated.
    if (!n.is_leaf) {
      n.grad = Tensor<T>();
      n.has_grad = false;
    }
  }
}

template <class T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor<T>(n.value->shape());
}

template class Tape<float>;
template class Tape<double>;

}  // namespace hetmem
