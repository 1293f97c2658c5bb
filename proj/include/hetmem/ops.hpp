#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "hetmem/tape.hpp"

namespace hetmem {

using TokenId = std::int32_t;

// Broadcasting is limited to leading batch dimensions: wherever two operands
// may differ in rank, the lower-rank one must equal the trailing dimensions
// of the other. Everything else needs an explicit reshape.

/// Matrix product over the last two axes. `a` is [..., m, k]; `b` is either
/// [k, n] (shared across a's batch) or [..., k, n] with a's leading dims.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

// a * b^T over the last two axes: a is [..., m, k], b is [..., n, k] with the
// same leading dims.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b);

// Elementwise sum; `b` may be a trailing-dims suffix of `a`.
template <class T>
Var<T> add(Var<T> a, Var<T> b);

template <class T>
Var<T> mul(Var<T> a, Var<T> b);

template <class T>
Var<T> scale(Var<T> a, T factor);

// Sum of all elements, as a rank-0 tensor.
template <class T>
Var<T> sum(Var<T> a);

template <class T>
Var<T> mean(Var<T> a);

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

// Elements [begin, end) along `axis`.
template <class T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end);

// Swaps two axes.
template <class T>
Var<T> transpose(Var<T> a, std::size_t axis0, std::size_t axis1);

template <class T>
Var<T> reshape(Var<T> a, Shape shape);

/// Numerically stable softmax along `axis`. Entries equal to -inf come out as
/// exactly zero; a slice in which every entry is -inf throws, since it means
/// a query had nothing to attend to.
template <class T>
Var<T> softmax(Var<T> a, std::size_t axis);

// Normalizes over the last axis, then applies gain and bias of that width.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T epsilon = T(1e-5));

// tanh approximation.
template <class T>
Var<T> gelu(Var<T> x);

template <class T>
Var<T> relu(Var<T> x);

/// Rows of `table` [vocab, d] selected by `ids`; result is [ids.size(), d].
/// Throws std::out_of_range for an id outside the table.
template <class T>
Var<T> embedding(Var<T> table, std::span<const TokenId> ids);

/// Mean negative log-likelihood (nats) of `targets` under `logits`
/// [N, vocab]; rank-0 result.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const TokenId> targets);

// Inverted dropout; identity when rate == 0.
template <class T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng);

// Same value, cut from the graph.
template <class T>
Var<T> detach(Var<T> x);

/// Per-row -log p(target) without recording anything.
template <class T>
std::vector<double> token_nll(const Tensor<T>& logits, std::span<const TokenId> targets);

}  // namespace hetmem
