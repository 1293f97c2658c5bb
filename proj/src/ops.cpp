#include "hetmem/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "hetmem/errors.hpp"

namespace hetmem {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

template <class T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw std::invalid_argument("operands are not on the same tape");
  }
  return a.tape();
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

// Copies src laid out as [pre, A, mid, B, post] into dst laid out as
// [pre, B, mid, A, post], optionally accumulating.
template <class T>
void swap_axes(const T* src, T* dst, std::size_t pre, std::size_t a, std::size_t mid, std::size_t b,
               std::size_t post, bool accumulate) {
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < mid; ++j)
        for (std::size_t k = 0; k < b; ++k) {
          const T* s = src + (((p * a + i) * mid + j) * b + k) * post;
          T* d = dst + (((p * b + k) * mid + j) * a + i) * post;
          if (accumulate) {
            for (std::size_t q = 0; q < post; ++q) d[q] += s[q];
          } else {
            std::copy(s, s + post, d);
          }
        }
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(av.shape()) + " x " +
                     to_string(bv.shape()));
  }
  const std::size_t m = av.dim(av.rank() - 2);
  const std::size_t k = av.dim(av.rank() - 1);
  const std::size_t kb = bv.dim(bv.rank() - 2);
  const std::size_t n = bv.dim(bv.rank() - 1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ: " + to_string(av.shape()) + " x " +
                     to_string(bv.shape()));
  }
  const bool shared = bv.rank() == 2;
  if (!shared) {
    const Shape lead_a(av.shape().begin(), av.shape().end() - 2);
    const Shape lead_b(bv.shape().begin(), bv.shape().end() - 2);
    if (lead_a != lead_b) {
      throw ShapeError("matmul: batch dimensions differ: " + to_string(av.shape()) + " x " +
                       to_string(bv.shape()));
    }
  }
  const std::size_t batch = prod(av.shape(), 0, av.rank() - 2);
  Shape out_shape(av.shape().begin(), av.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);

  if (shared) {
    MutMap<T>(out.ptr(), batch * m, n).noalias() =
        ConstMap<T>(av.ptr(), batch * m, k) * ConstMap<T>(bv.ptr(), k, n);
  } else {
    for (std::size_t s = 0; s < batch; ++s) {
      MutMap<T>(out.ptr() + s * m * n, m, n).noalias() =
          ConstMap<T>(av.ptr() + s * m * k, m, k) * ConstMap<T>(bv.ptr() + s * k * n, k, n);
    }
  }

  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.upstream(self).data();
    const T* ap = t.value(ia).ptr();
    const T* bp = t.value(ib).ptr();
    if (t.requires_grad(ia)) {
      T* ga = t.grad_buffer(ia).data();
      if (shared) {
        MutMap<T>(ga, batch * m, k).noalias() +=
            ConstMap<T>(g, batch * m, n) * ConstMap<T>(bp, k, n).transpose();
      } else {
        for (std::size_t s = 0; s < batch; ++s) {
          MutMap<T>(ga + s * m * k, m, k).noalias() +=
              ConstMap<T>(g + s * m * n, m, n) * ConstMap<T>(bp + s * k * n, k, n).transpose();
        }
      }
    }
    if (t.requires_grad(ib)) {
      T* gb = t.grad_buffer(ib).data();
      if (shared) {
        MutMap<T>(gb, k, n).noalias() +=
            ConstMap<T>(ap, batch * m, k).transpose() * ConstMap<T>(g, batch * m, n);
      } else {
        for (std::size_t s = 0; s < batch; ++s) {
          MutMap<T>(gb + s * k * n, k, n).noalias() +=
              ConstMap<T>(ap + s * m * k, m, k).transpose() * ConstMap<T>(g + s * m * n, m, n);
        }
      }
    }
  });
}

template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() < 2 || av.rank() != bv.rank()) {
    throw ShapeError("matmul_nt: operands need equal rank >= 2, got " + to_string(av.shape()) + " x " +
                     to_string(bv.shape()));
  }
  const std::size_t r = av.rank();
  const std::size_t m = av.dim(r - 2);
  const std::size_t k = av.dim(r - 1);
  const std::size_t n = bv.dim(r - 2);
  if (bv.dim(r - 1) != k || !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin())) {
    throw ShapeError("matmul_nt: incompatible shapes " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  const std::size_t batch = prod(av.shape(), 0, r - 2);
  Shape out_shape(av.shape().begin(), av.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  for (std::size_t s = 0; s < batch; ++s) {
    MutMap<T>(out.ptr() + s * m * n, m, n).noalias() =
        ConstMap<T>(av.ptr() + s * m * k, m, k) * ConstMap<T>(bv.ptr() + s * n * k, n, k).transpose();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.upstream(self).data();
    const T* ap = t.value(ia).ptr();
    const T* bp = t.value(ib).ptr();
    if (t.requires_grad(ia)) {
      T* ga = t.grad_buffer(ia).data();
      for (std::size_t s = 0; s < batch; ++s) {
        MutMap<T>(ga + s * m * k, m, k).noalias() +=
            ConstMap<T>(g + s * m * n, m, n) * ConstMap<T>(bp + s * n * k, n, k);
      }
    }
    if (t.requires_grad(ib)) {
      T* gb = t.grad_buffer(ib).data();
      for (std::size_t s = 0; s < batch; ++s) {
        MutMap<T>(gb + s * n * k, n, k).noalias() +=
            ConstMap<T>(g + s * m * n, m, n).transpose() * ConstMap<T>(ap + s * m * k, m, k);
      }
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Shape& as = av.shape();
  const Shape& bs = bv.shape();
  if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - bs.size())) {
    throw ShapeError("add: " + to_string(bs) + " does not broadcast onto " + to_string(as));
  }
  const std::size_t inner = bv.size();
  const std::size_t outer = inner == 0 ? 0 : av.size() / inner;
  Tensor<T> out = Tensor<T>::uninitialized(as);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* x = av.ptr() + o * inner;
    T* y = out.ptr() + o * inner;
    const T* z = bv.ptr();
    for (std::size_t i = 0; i < inner; ++i) y[i] = x[i] + z[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    if (t.requires_grad(ia)) {
      auto ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad_buffer(ib);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "mul");
  Tensor<T> out = Tensor<T>::uninitialized(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    if (t.requires_grad(ia)) {
      auto ga = t.grad_buffer(ia);
      const auto& y = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad_buffer(ib);
      const auto& x = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> out = Tensor<T>::uninitialized(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& av = a.value();
  T total(0);
  for (T x : av.data()) total += x;
  Tensor<T> out(Shape{}, total);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape<T>& t, std::size_t self) {
    const T g = t.upstream(self)[0];
    for (T& x : t.grad_buffer(ia)) x += g;
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape<T>& tape = parts[0].tape();
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var<T>& p : parts) {
    if (&p.tape() != &tape) throw std::invalid_argument("concat: inputs on different tapes");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
    widths.push_back(s[axis]);
  }
  const std::size_t outer = prod(first, 0, axis);
  const std::size_t inner = prod(first, axis + 1, first.size());
  const std::size_t row = out_shape[axis] * inner;
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].value().ptr();
    const std::size_t chunk = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.ptr() + o * row + offset);
    }
    offset += chunk;
  }
  return tape.record(std::move(out), ids, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t chunk = widths[p] * inner;
      if (t.requires_grad(ids[p])) {
        auto gp = t.grad_buffer(ids[p]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * row + off + i];
      }
      off += chunk;
    }
  });
}

template <class T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + to_string(s));
  }
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t row = s[axis] * inner;
  const std::size_t chunk = (end - begin) * inner;
  const std::size_t off = begin * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  const T* src = a.value().ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + o * row + off, src + o * row + off + chunk, out.ptr() + o * chunk);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < chunk; ++i) ga[o * row + off + i] += g[o * chunk + i];
  });
}

template <class T>
Var<T> transpose(Var<T> a, std::size_t axis0, std::size_t axis1) {
  const Shape& s = a.shape();
  if (axis0 >= s.size() || axis1 >= s.size()) {
    throw ShapeError("transpose: axes out of range for " + to_string(s));
  }
  if (axis0 > axis1) std::swap(axis0, axis1);
  const std::size_t pre = prod(s, 0, axis0);
  const std::size_t d0 = s[axis0];
  const std::size_t mid = prod(s, axis0 + 1, axis1);
  const std::size_t d1 = s[axis1];
  const std::size_t post = prod(s, axis1 + 1, s.size());
  Shape out_shape = s;
  std::swap(out_shape[axis0], out_shape[axis1]);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  swap_axes(a.value().ptr(), out.ptr(), pre, d0, mid, d1, post, false);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape<T>& t, std::size_t self) {
    swap_axes(t.upstream(self).data(), t.grad_buffer(ia).data(), pre, d1, mid, d0, post, true);
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <class T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size() || s[axis] == 0) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + to_string(s));
  }
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t len = s[axis];
  const std::size_t inner = prod(s, axis + 1, s.size());
  const Tensor<T>& x = a.value();
  Tensor<T> y(s);
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T hi = neg_inf;
      for (std::size_t l = 0; l < len; ++l) hi = std::max(hi, x[base + l * inner]);
      if (hi == neg_inf) {
        throw std::domain_error("softmax: every entry is -inf (empty attention context)");
      }
      T total(0);
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp(x[base + l * inner] - hi);
        y[base + l * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t l = 0; l < len; ++l) y[base + l * inner] *= inv;
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor<T>& p = t.value(self);
    auto ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        T dot(0);
        for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * p[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t j = base + l * inner;
          ga[j] += p[j] * (g[j] - dot);
        }
      }
    }
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T epsilon) {
  Tape<T>& tape = tape_of(x, gain);
  tape_of(x, bias);
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = xv.dim(xv.rank() - 1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                     to_string(gain.shape()) + " and " + to_string(bias.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : xv.size() / d;
  std::vector<T> mu(rows), rstd(rows);
  Tensor<T> out = Tensor<T>::uninitialized(xv.shape());
  const T* g = gain.value().ptr();
  const T* b = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    T m(0);
    for (std::size_t i = 0; i < d; ++i) m += xr[i];
    m /= static_cast<T>(d);
    T var(0);
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + epsilon);
    mu[r] = m;
    rstd[r] = rs;
    T* yr = out.ptr() + r * d;
    for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - m) * rs * g[i] + b[i];
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      std::move(out), {ix, ig, ib},
      [=, mu = std::move(mu), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        auto dy = t.upstream(self);
        const T* xp = t.value(ix).ptr();
        const T* gp = t.value(ig).ptr();
        const bool want_x = t.requires_grad(ix);
        const bool want_g = t.requires_grad(ig);
        const bool want_b = t.requires_grad(ib);
        T* dx = want_x ? t.grad_buffer(ix).data() : nullptr;
        T* dg = want_g ? t.grad_buffer(ig).data() : nullptr;
        T* db = want_b ? t.grad_buffer(ib).data() : nullptr;
        std::vector<T> xhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = xp + r * d;
          const T* gy = dy.data() + r * d;
          for (std::size_t i = 0; i < d; ++i) xhat[i] = (xr[i] - mu[r]) * rstd[r];
          if (want_g)
            for (std::size_t i = 0; i < d; ++i) dg[i] += gy[i] * xhat[i];
          if (want_b)
            for (std::size_t i = 0; i < d; ++i) db[i] += gy[i];
          if (want_x) {
            T mean_dxhat(0), mean_dxhat_xhat(0);
            for (std::size_t i = 0; i < d; ++i) {
              const T dh = gy[i] * gp[i];
              mean_dxhat += dh;
              mean_dxhat_xhat += dh * xhat[i];
            }
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            T* dxr = dx + r * d;
            for (std::size_t i = 0; i < d; ++i) {
              dxr[i] += rstd[r] * (gy[i] * gp[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
            }
          }
        }
      });
}

template <class T>
Var<T> gelu(Var<T> x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using CMap = Eigen::Map<const Arr>;
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  const Tensor<T>& xv = x.value();
  const auto n = static_cast<Eigen::Index>(xv.size());
  Tensor<T> out = Tensor<T>::uninitialized(xv.shape());
  const CMap v(xv.ptr(), n);
  Eigen::Map<Arr>(out.ptr(), n) = T(0.5) * v * (T(1) + (c * (v + a * v.cube())).tanh());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [=](Tape<T>& t, std::size_t self) {
    const CMap g(t.upstream(self).data(), n);
    const CMap in(t.value(ix).ptr(), n);
    const Arr th = (c * (in + a * in.cube())).tanh();
    Eigen::Map<Arr>(t.grad_buffer(ix).data(), n) +=
        g * (T(0.5) * (T(1) + th) + T(0.5) * in * (T(1) - th.square()) * c * (T(1) + T(3) * a * in.square()));
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out = Tensor<T>::uninitialized(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [=](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    const Tensor<T>& in = t.value(ix);
    auto gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > T(0)) gx[i] += g[i];
  });
}

template <class T>
Var<T> embedding(Var<T> table, std::span<const TokenId> ids) {
  const Tensor<T>& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding: table must be [vocab, d], got " + to_string(tv.shape()));
  const std::size_t vocab = tv.dim(0);
  const std::size_t d = tv.dim(1);
  std::vector<TokenId> rows(ids.begin(), ids.end());
  Tensor<T> out = Tensor<T>::uninitialized(Shape{rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(rows[r]) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
    const T* src = tv.ptr() + static_cast<std::size_t>(rows[r]) * d;
    std::copy(src, src + d, out.ptr() + r * d);
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {it},
                             [=, rows = std::move(rows)](Tape<T>& t, std::size_t self) {
                               auto g = t.upstream(self);
                               auto gt = t.grad_buffer(it);
                               for (std::size_t r = 0; r < rows.size(); ++r) {
                                 T* dst = gt.data() + static_cast<std::size_t>(rows[r]) * d;
                                 for (std::size_t i = 0; i < d; ++i) dst[i] += g[r * d + i];
                               }
                             });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const TokenId> targets) {
  const Tensor<T>& lv = logits.value();
  if (lv.rank() < 1 || lv.dim(lv.rank() - 1) == 0) throw ShapeError("cross_entropy: empty logits");
  const std::size_t vocab = lv.dim(lv.rank() - 1);
  const std::size_t rows = lv.size() / vocab;
  if (rows != targets.size() || rows == 0) {
    throw ShapeError("cross_entropy: " + std::to_string(rows) + " logit rows vs " +
                     std::to_string(targets.size()) + " targets");
  }
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  T total(0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(tgt[r]));
    }
    const T* x = lv.ptr() + r * vocab;
    const T hi = *std::max_element(x, x + vocab);
    T z(0);
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(x[v] - hi);
    total += std::log(z) + hi - x[tgt[r]];
  }
  Tensor<T> out(Shape{}, total / static_cast<T>(rows));
  const std::size_t il = logits.id();
  return logits.tape().record(std::move(out), {il},
                              [=, tgt = std::move(tgt)](Tape<T>& t, std::size_t self) {
                                const T g = t.upstream(self)[0] / static_cast<T>(rows);
                                const Tensor<T>& in = t.value(il);
                                auto gl = t.grad_buffer(il);
                                for (std::size_t r = 0; r < rows; ++r) {
                                  const T* x = in.ptr() + r * vocab;
                                  T* dst = gl.data() + r * vocab;
                                  const T hi = *std::max_element(x, x + vocab);
                                  T z(0);
                                  for (std::size_t v = 0; v < vocab; ++v) z += std::exp(x[v] - hi);
                                  for (std::size_t v = 0; v < vocab; ++v) {
                                    dst[v] += g * std::exp(x[v] - hi) / z;
                                  }
                                  dst[tgt[r]] -= g;
                                }
                              });
}

template <class T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const Tensor<T>& xv = x.value();
  std::bernoulli_distribution keep(1.0 - rate);
  const T kept = T(1) / static_cast<T>(1.0 - rate);
  std::vector<T> mask(xv.size());
  Tensor<T> out = Tensor<T>::uninitialized(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? kept : T(0);
    out[i] = xv[i] * mask[i];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [=, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    auto g = t.upstream(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

template <class T>
Var<T> detach(Var<T> x) {
  return x.tape().leaf(x.value(), false);
}

template <class T>
std::vector<double> token_nll(const Tensor<T>& logits, std::span<const TokenId> targets) {
  const std::size_t vocab = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.size() / vocab;
  if (rows != targets.size()) throw ShapeError("token_nll: target count mismatch");
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = logits.ptr() + r * vocab;
    const auto tgt = targets[r];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab) throw std::out_of_range("token_nll: target id");
    const double hi = *std::max_element(x, x + vocab);
    double total = 0;
    for (std::size_t v = 0; v < vocab; ++v) total += std::exp(static_cast<double>(x[v]) - hi);
    out[r] = std::log(total) + hi - static_cast<double>(x[tgt]);
  }
  return out;
}

}  // namespace hetmem

namespace hetmem {

#define HETMEM_INSTANTIATE_OPS(T)                                                      \
  template Var<T> matmul(Var<T>, Var<T>);                                              \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                           \
  template Var<T> add(Var<T>, Var<T>);                                                 \
  template Var<T> mul(Var<T>, Var<T>);                                                 \
  template Var<T> scale(Var<T>, T);                                                    \
  template Var<T> sum(Var<T>);                                                         \
  template Var<T> mean(Var<T>);                                                        \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                        \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                \
  template Var<T> transpose(Var<T>, std::size_t, std::size_t);                         \
  template Var<T> reshape(Var<T>, Shape);                                              \
  template Var<T> softmax(Var<T>, std::size_t);                                        \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                               \
  template Var<T> gelu(Var<T>);                                                        \
  template Var<T> relu(Var<T>);                                                        \
  template Var<T> embedding(Var<T>, std::span<const TokenId>);                         \
  template Var<T> cross_entropy(Var<T>, std::span<const TokenId>);                     \
  template Var<T> dropout(Var<T>, double, std::mt19937_64&);                           \
  template Var<T> detach(Var<T>);                                                      \
  template std::vector<double> token_nll(const Tensor<T>&, std::span<const TokenId>);

HETMEM_INSTANTIATE_OPS(float)
HETMEM_INSTANTIATE_OPS(double)

#undef HETMEM_INSTANTIATE_OPS

}  // namespace hetmem
