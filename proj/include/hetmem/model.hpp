#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hetmem/attention.hpp"
#include "hetmem/memory.hpp"
#include "hetmem/ops.hpp"

namespace hetmem {

/// Architecture of the residual stack. Every field except `memory` enters
/// the parameter count; memory lengths and their arrangement never do.
struct ModelConfig {
  std::size_t layers = 12;
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t window = 64;
  std::size_t ff_multiplier = 4;
  std::size_t vocab = 256;
  // Largest relative distance with its own bias; longer distances share it.
  std::size_t max_distance = 447;
  bool tie_embeddings = false;
  bool scale_logits = true;
  double attention_dropout = 0.0;
  double init_scale = 0.02;
  MemoryConfig memory;

  void validate() const;
  AttentionOptions attention_options() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct BlockParams {
  Tensor<T> norm1_gain;
  Tensor<T> norm1_bias;
  AttentionParams<T> attention;
  Tensor<T> norm2_gain;
  Tensor<T> norm2_bias;
  Tensor<T> ff_in;
  Tensor<T> ff_in_bias;
  Tensor<T> ff_out;
  Tensor<T> ff_out_bias;
};

template <class T>
struct ModelParams {
  Tensor<T> embedding;  // [vocab, d]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> final_gain;
  Tensor<T> final_bias;
  Tensor<T> output;  // [d, vocab]; empty when embeddings are tied
  Tensor<T> output_bias;

  // Normal(0, init_scale) weights, unit gains, zero biases.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
  static ModelParams zeros(const ModelConfig& config);

  /// Visits every trainable tensor with a stable dotted name, always in the
  /// same order.
  template <class F>
  void for_each(F&& f);
  template <class F>
  void for_each(F&& f) const;

  std::size_t count() const;

  template <class U>
  ModelParams<U> convert() const;
};

std::size_t parameter_count(const ModelConfig& config);

template <class T>
struct BlockVars {
  Var<T> norm2_gain;
  Var<T> norm2_bias;
  AttentionVars<T> attention;  // carries norm1 as its pre-norm
  Var<T> ff_in;
  Var<T> ff_in_bias;
  Var<T> ff_out;
  Var<T> ff_out_bias;
};

template <class T>
struct ModelVars {
  Var<T> embedding;
  std::vector<BlockVars<T>> blocks;
  Var<T> final_gain;
  Var<T> final_bias;
  Var<T> output;  // invalid when tied
  Var<T> output_bias;
  // Same order as ModelParams::for_each.
  std::vector<Var<T>> all;
};

// Borrows `params`, which must outlive the tape.
template <class T>
ModelVars<T> bind(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);

// Gradients in ModelParams layout, after tape.backward().
template <class T>
ModelParams<T> gradients(const Tape<T>& tape, const ModelVars<T>& vars, const ModelParams<T>& like);

struct ForwardOptions {
  // Dropout is active only when an rng is supplied.
  std::mt19937_64* rng = nullptr;
};

template <class T>
struct ForwardResult {
  Var<T> logits;  // [lanes * n, vocab], lane-major
  MemoryManager<T> memories;
};

/// One window step for `memories.lanes()` parallel streams. `tokens` holds
/// lanes * n ids, lane-major. Each layer caches its input rows, attends over
/// its memory plus the causal window, then applies the feedforward block;
/// returns next-token logits and the updated caches.
template <class T>
ForwardResult<T> forward(const ModelVars<T>& vars, const ModelConfig& config,
                         std::span<const TokenId> tokens, const MemoryManager<T>& memories,
                         const ForwardOptions& options = {});

/// The same stack with the memory path compiled out: every layer sees only
/// the current window.
template <class T>
Var<T> forward_windowed(const ModelVars<T>& vars, const ModelConfig& config,
                        std::span<const TokenId> tokens, std::size_t lanes,
                        const ForwardOptions& options = {});

// Mean cross-entropy in nats.
template <class T>
Var<T> loss(Var<T> logits, std::span<const TokenId> targets);

double bpc(double nats_per_token);

}  // namespace hetmem

#include "hetmem/model_impl.hpp"
