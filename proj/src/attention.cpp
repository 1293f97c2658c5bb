#include "hetmem/attention.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "hetmem/errors.hpp"

namespace hetmem {

template <class T>
AttentionVars<T> bind(Tape<T>& tape, const AttentionParams<T>& params, bool requires_grad) {
  AttentionVars<T> vars;
  vars.query = tape.borrow(params.query, requires_grad);
  vars.key = tape.borrow(params.key, requires_grad);
  vars.value = tape.borrow(params.value, requires_grad);
  vars.output = tape.borrow(params.output, requires_grad);
  vars.rel_bias = tape.borrow(params.rel_bias, requires_grad);
  return vars;
}

template <class T>
Var<T> relative_position_bias(Var<T> rel_bias, std::size_t n, std::size_t m) {
  const Tensor<T>& table = rel_bias.value();
  if (table.rank() != 2 || table.dim(1) == 0) {
    throw ShapeError("relative_position_bias: table must be [heads, max_distance + 1], got " +
                     to_string(table.shape()));
  }
  const std::size_t heads = table.dim(0);
  const std::size_t width = table.dim(1);
  const std::size_t max_distance = width - 1;
  const std::size_t keys = m + n;
  Tensor<T> out(Shape{heads, n, keys}, -std::numeric_limits<T>::infinity());
  for (std::size_t h = 0; h < heads; ++h) {
    const T* row = table.ptr() + h * width;
    for (std::size_t t = 0; t < n; ++t) {
      T* dst = out.ptr() + (h * n + t) * keys;
      for (std::size_t j = 0; j <= m + t; ++j) dst[j] = row[std::min(m + t - j, max_distance)];
    }
  }
  const std::size_t ib = rel_bias.id();
  return rel_bias.tape().record(std::move(out), {ib}, [=](Tape<T>& tp, std::size_t self) {
    auto g = tp.upstream(self);
    auto gb = tp.grad_buffer(ib);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t) {
        const T* src = g.data() + (h * n + t) * keys;
        T* row = gb.data() + h * width;
        for (std::size_t j = 0; j <= m + t; ++j) row[std::min(m + t - j, max_distance)] += src[j];
      }
  });
}

template <class T>
Var<T> attend(const AttentionInput<T>& input, const AttentionVars<T>& params,
              const AttentionOptions& options, std::mt19937_64* rng) {
  Var<T> h = input.window;
  Tape<T>& tape = h.tape();
  const Shape& ws = h.shape();
  if (ws.size() != 2 && ws.size() != 3) {
    throw ShapeError("attend: window must be [n, d] or [lanes, n, d], got " + to_string(ws));
  }
  const bool unbatched = ws.size() == 2;
  const std::size_t lanes = unbatched ? 1 : ws[0];
  const std::size_t n = ws[ws.size() - 2];
  const std::size_t d = ws.back();
  const std::size_t heads = options.heads;
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attend: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const Shape square{d, d};
  if (params.query.shape() != square || params.key.shape() != square ||
      params.value.shape() != square || params.output.shape() != square) {
    throw ShapeError("attend: projections must be [" + std::to_string(d) + ", " +
                     std::to_string(d) + "]");
  }
  if (params.rel_bias.value().rank() != 2 || params.rel_bias.dim(0) != heads) {
    throw ShapeError("attend: rel_bias must be [heads, max_distance + 1], got " +
                     to_string(params.rel_bias.shape()));
  }
  if (n == 0) throw ShapeError("attend: empty window");

  std::size_t m = 0;
  if (input.memory != nullptr && !input.memory->empty()) {
    const Shape& ms = input.memory->shape();
    const bool ok = unbatched ? (ms.size() == 2 && ms[1] == d)
                              : (ms.size() == 3 && ms[0] == lanes && ms[2] == d);
    if (!ok) {
      throw ShapeError("attend: memory " + to_string(ms) + " does not match window " + to_string(ws));
    }
    m = ms[ms.size() - 2];
  }
  const std::size_t keys = m + n;
  const std::size_t dh = d / heads;

  Var<T> x = unbatched ? reshape(h, Shape{1, n, d}) : h;
  const bool normed = params.norm_gain.has_value() && params.norm_bias.has_value();
  Var<T> xw = normed ? layer_norm(x, *params.norm_gain, *params.norm_bias) : x;
  Var<T> xk = xw;
  if (m > 0) {
    Var<T> mem = tape.leaf(input.memory->reshaped(Shape{lanes, m, d}), false);
    Var<T> xm = normed ? layer_norm(mem, *params.norm_gain, *params.norm_bias) : mem;
    const std::array<Var<T>, 2> parts{xm, xw};
    xk = concat<T>(parts, 1);
  }

  Var<T> q = matmul(xw, params.query);
  Var<T> k = matmul(xk, params.key);
  Var<T> v = matmul(xk, params.value);

  Var<T> qh = transpose(reshape(q, Shape{lanes, n, heads, dh}), 1, 2);                     // [b,H,n,dh]
  Var<T> kh = transpose(reshape(k, Shape{lanes, keys, heads, dh}), 1, 2);                  // [b,H,L,dh]
  Var<T> vh = transpose(reshape(v, Shape{lanes, keys, heads, dh}), 1, 2);                  // [b,H,L,dh]

  Var<T> logits = matmul_nt(qh, kh);
  if (options.scale_logits) logits = scale(logits, T(1) / std::sqrt(static_cast<T>(dh)));
  logits = add(logits, relative_position_bias(params.rel_bias, n, m));
  Var<T> probs = softmax(logits, 3);
  if (rng != nullptr && options.dropout > 0.0) probs = dropout(probs, options.dropout, *rng);

  Var<T> heads_out = reshape(transpose(matmul(probs, vh), 1, 2), Shape{lanes, n, d});
  Var<T> out = matmul(heads_out, params.output);
  return unbatched ? reshape(out, Shape{n, d}) : out;
}

std::uint64_t attention_flops(std::uint64_t n, std::uint64_t m) { return n * (n + m); }

template AttentionVars<float> bind(Tape<float>&, const AttentionParams<float>&, bool);
template AttentionVars<double> bind(Tape<double>&, const AttentionParams<double>&, bool);
template Var<float> relative_position_bias(Var<float>, std::size_t, std::size_t);
template Var<double> relative_position_bias(Var<double>, std::size_t, std::size_t);
template Var<float> attend(const AttentionInput<float>&, const AttentionVars<float>&,
                           const AttentionOptions&, std::mt19937_64*);
template Var<double> attend(const AttentionInput<double>&, const AttentionVars<double>&,
                            const AttentionOptions&, std::mt19937_64*);

}  // namespace hetmem
