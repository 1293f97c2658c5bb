#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "hetmem/ops.hpp"

namespace hetmem {

/// Weights of one multi-head attention sublayer.
///
/// The per-head projections are stored packed: column block i of `query`
/// (width d/heads) is head i's query matrix, likewise for key and value, and
/// row block i of `output` is head i's output weight. Concatenating head
/// outputs and multiplying by `output` is exactly the sum of per-head output
/// projections. `rel_bias` is [heads, max_distance + 1]: one learned logit
/// offset per head per clipped relative distance.
template <class T>
struct AttentionParams {
  Tensor<T> query;
  Tensor<T> key;
  Tensor<T> value;
  Tensor<T> output;
  Tensor<T> rel_bias;
};

// AttentionParams bound to a tape. The optional norm pair, when set, is a
// pre-attention layer norm applied to both window and memory rows.
template <class T>
struct AttentionVars {
  Var<T> query;
  Var<T> key;
  Var<T> value;
  Var<T> output;
  Var<T> rel_bias;
  std::optional<Var<T>> norm_gain;
  std::optional<Var<T>> norm_bias;
};

struct AttentionOptions {
  std::size_t heads = 1;
  // Multiply logits by 1/sqrt(d/heads) before adding the position bias.
  bool scale_logits = true;
  // Applied to attention probabilities when an rng is supplied.
  double dropout = 0.0;
};

/// Inputs to one attention call. `window` is [n, d] or [lanes, n, d];
/// `memory` is the matching [m, d] or [lanes, m, d] cache, oldest row
/// first. Memory rows are read, never differentiated: they enter the tape as
/// constants, while the parameters that act on them still receive gradient.
template <class T>
struct AttentionInput {
  Var<T> window;
  const Tensor<T>* memory = nullptr;  // null means no memory
};

template <class T>
AttentionVars<T> bind(Tape<T>& tape, const AttentionParams<T>& params, bool requires_grad);

/// Multi-head attention of every window row over the layer's memory plus the
/// window rows at or before it.
///
/// For query t and key j (keys indexed over memory then window), the logit is
/// q_t.k_j * s + rel_bias[h][min(m + t - j, max_distance)] where s is
/// 1/sqrt(d/heads) (or 1), and keys with j > m + t are masked with -inf.
template <class T>
Var<T> attend(const AttentionInput<T>& input, const AttentionVars<T>& params,
              const AttentionOptions& options, std::mt19937_64* rng = nullptr);

/// Per-head logit offsets as a [heads, n, m + n] tensor: the clipped
/// relative-distance bias where key j is visible to query t, -inf elsewhere.
template <class T>
Var<T> relative_position_bias(Var<T> rel_bias, std::size_t n, std::size_t m);

/// Dominant score-matrix cost of attending a window of n over m memory rows:
/// n * (n + m). A relative cost model in units of one d-wide dot product per
/// head group, not a latency predictor.
std::uint64_t attention_flops(std::uint64_t n, std::uint64_t m);

}  // namespace hetmem
