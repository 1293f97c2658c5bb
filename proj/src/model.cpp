#include "hetmem/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hetmem/errors.hpp"

namespace hetmem {

void ModelConfig::validate() const {
  if (layers == 0 || d_model == 0 || heads == 0 || window == 0 || ff_multiplier == 0) {
    throw ConfigError("model: layers, d_model, heads, window and ff_multiplier must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (vocab < 2) throw ConfigError("model: vocab must be at least 2");
  if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) {
    throw ConfigError("model: attention_dropout must be in [0, 1)");
  }
  if (!(init_scale > 0.0)) throw ConfigError("model: init_scale must be positive");
  if (memory.num_layers != layers) {
    throw ConfigError("memory: layer count " + std::to_string(memory.num_layers) +
                      " differs from model.layers " + std::to_string(layers));
  }
  memory.validate();
}

AttentionOptions ModelConfig::attention_options() const {
  AttentionOptions o;
  o.heads = heads;
  o.scale_logits = scale_logits;
  o.dropout = attention_dropout;
  return o;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t f = c.ff_multiplier * d;
  const std::size_t block = 4 * d + 4 * d * d + c.heads * (c.max_distance + 1) + d * f + f + f * d + d;
  return c.vocab * d + c.layers * block + 2 * d + (c.tie_embeddings ? 0 : d * c.vocab) + c.vocab;
}

namespace {

template <class T>
ModelParams<T> shaped(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t f = c.ff_multiplier * d;
  ModelParams<T> p;
  p.embedding = Tensor<T>(Shape{c.vocab, d});
  for (std::size_t i = 0; i < c.layers; ++i) {
    BlockParams<T> b;
    b.norm1_gain = Tensor<T>(Shape{d}, T(1));
    b.norm1_bias = Tensor<T>(Shape{d});
    b.attention.query = Tensor<T>(Shape{d, d});
    b.attention.key = Tensor<T>(Shape{d, d});
    b.attention.value = Tensor<T>(Shape{d, d});
    b.attention.output = Tensor<T>(Shape{d, d});
    b.attention.rel_bias = Tensor<T>(Shape{c.heads, c.max_distance + 1});
    b.norm2_gain = Tensor<T>(Shape{d}, T(1));
    b.norm2_bias = Tensor<T>(Shape{d});
    b.ff_in = Tensor<T>(Shape{d, f});
    b.ff_in_bias = Tensor<T>(Shape{f});
    b.ff_out = Tensor<T>(Shape{f, d});
    b.ff_out_bias = Tensor<T>(Shape{d});
    p.blocks.push_back(std::move(b));
  }
  p.final_gain = Tensor<T>(Shape{d}, T(1));
  p.final_bias = Tensor<T>(Shape{d});
  if (!c.tie_embeddings) p.output = Tensor<T>(Shape{d, c.vocab});
  p.output_bias = Tensor<T>(Shape{c.vocab});
  return p;
}

}  // namespace

template <class T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<T> p = shaped<T>(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_scale);
  auto fill = [&](Tensor<T>& t) {
    for (T& x : t.data()) x = static_cast<T>(normal(rng));
  };
  fill(p.embedding);
  for (auto& b : p.blocks) {
    fill(b.attention.query);
    fill(b.attention.key);
    fill(b.attention.value);
    fill(b.attention.output);
    fill(b.ff_in);
    fill(b.ff_out);
  }
  if (!p.output.empty()) fill(p.output);
  return p;
}

template <class T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p = shaped<T>(config);
  p.for_each([](const std::string&, Tensor<T>& t) { std::fill(t.data().begin(), t.data().end(), T(0)); });
  return p;
}

template <class T>
ModelVars<T> bind(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
  ModelVars<T> v;
  auto b = [&](const Tensor<T>& t) {
    Var<T> x = tape.borrow(t, requires_grad);
    v.all.push_back(x);
    return x;
  };
  // Binding order follows ModelParams::for_each.
  v.embedding = b(params.embedding);
  for (const BlockParams<T>& p : params.blocks) {
    BlockVars<T> bv;
    bv.attention.norm_gain = b(p.norm1_gain);
    bv.attention.norm_bias = b(p.norm1_bias);
    bv.attention.query = b(p.attention.query);
    bv.attention.key = b(p.attention.key);
    bv.attention.value = b(p.attention.value);
    bv.attention.output = b(p.attention.output);
    bv.attention.rel_bias = b(p.attention.rel_bias);
    bv.norm2_gain = b(p.norm2_gain);
    bv.norm2_bias = b(p.norm2_bias);
    bv.ff_in = b(p.ff_in);
    bv.ff_in_bias = b(p.ff_in_bias);
    bv.ff_out = b(p.ff_out);
    bv.ff_out_bias = b(p.ff_out_bias);
    v.blocks.push_back(std::move(bv));
  }
  v.final_gain = b(params.final_gain);
  v.final_bias = b(params.final_bias);
  if (!params.output.empty()) v.output = b(params.output);
  v.output_bias = b(params.output_bias);
  return v;
}

template <class T>
ModelParams<T> gradients(const Tape<T>& tape, const ModelVars<T>& vars, const ModelParams<T>& like) {
  ModelParams<T> out = like;
  std::size_t i = 0;
  out.for_each([&](const std::string&, Tensor<T>& t) { t = tape.grad(vars.all.at(i++)); });
  return out;
}

namespace {

template <class T>
Var<T> run_stack(const ModelVars<T>& vars, const ModelConfig& config, std::span<const TokenId> tokens,
                 std::size_t lanes, const MemoryManager<T>* memories, MemoryManager<T>* next,
                 const ForwardOptions& options) {
  if (lanes == 0 || tokens.empty() || tokens.size() % lanes != 0) {
    throw ShapeError("forward: " + std::to_string(tokens.size()) + " tokens for " +
                     std::to_string(lanes) + " lanes");
  }
  if (vars.blocks.size() != config.layers) throw ShapeError("forward: parameters do not match layer count");
  const std::size_t n = tokens.size() / lanes;
  const std::size_t d = config.d_model;
  const AttentionOptions attn = config.attention_options();

  Var<T> h = reshape(embedding(vars.embedding, tokens), Shape{lanes, n, d});
  for (std::size_t i = 0; i < config.layers; ++i) {
    const BlockVars<T>& b = vars.blocks[i];
    AttentionInput<T> input{h, nullptr};
    if (memories != nullptr) {
      input.memory = &memories->layer(i).rows();
      next->update(i, h.value());
    }
    h = add(h, attend(input, b.attention, attn, options.rng));
    Var<T> x = layer_norm(h, b.norm2_gain, b.norm2_bias);
    x = add(matmul(x, b.ff_in), b.ff_in_bias);
    x = add(matmul(gelu(x), b.ff_out), b.ff_out_bias);
    h = add(h, x);
  }
  Var<T> z = layer_norm(h, vars.final_gain, vars.final_bias);
  Var<T> proj = vars.output.valid() ? vars.output : transpose(vars.embedding, 0, 1);
  Var<T> logits = add(matmul(z, proj), vars.output_bias);
  return reshape(logits, Shape{lanes * n, config.vocab});
}

}  // namespace

template <class T>
ForwardResult<T> forward(const ModelVars<T>& vars, const ModelConfig& config,
                         std::span<const TokenId> tokens, const MemoryManager<T>& memories,
                         const ForwardOptions& options) {
  if (memories.num_layers() != config.layers ||
      memories.config().lrm_layers != config.memory.lrm_layers) {
    throw ShapeError("forward: memories do not match the model's memory arrangement");
  }
  if (memories.num_layers() > 0 && memories.layer(0).width() != config.d_model) {
    throw ShapeError("forward: memory width differs from d_model");
  }
  ForwardResult<T> result{Var<T>(), memories};
  result.logits = run_stack(vars, config, tokens, memories.lanes(), &memories, &result.memories, options);
  return result;
}

template <class T>
Var<T> forward_windowed(const ModelVars<T>& vars, const ModelConfig& config,
                        std::span<const TokenId> tokens, std::size_t lanes,
                        const ForwardOptions& options) {
  return run_stack<T>(vars, config, tokens, lanes, nullptr, nullptr, options);
}

template <class T>
Var<T> loss(Var<T> logits, std::span<const TokenId> targets) {
  return cross_entropy(logits, targets);
}

double bpc(double nats_per_token) { return nats_per_token / std::numbers::ln2; }

#define HETMEM_INSTANTIATE_MODEL(T)                                                              \
  template struct ModelParams<T>;                                                                \
  template ModelVars<T> bind(Tape<T>&, const ModelParams<T>&, bool);                             \
  template ModelParams<T> gradients(const Tape<T>&, const ModelVars<T>&, const ModelParams<T>&); \
  template ForwardResult<T> forward(const ModelVars<T>&, const ModelConfig&,                     \
                                    std::span<const TokenId>, const MemoryManager<T>&,           \
                                    const ForwardOptions&);                                      \
  template Var<T> forward_windowed(const ModelVars<T>&, const ModelConfig&,                      \
                                   std::span<const TokenId>, std::size_t, const ForwardOptions&); \
  template Var<T> loss(Var<T>, std::span<const TokenId>);

HETMEM_INSTANTIATE_MODEL(float)
HETMEM_INSTANTIATE_MODEL(double)

#undef HETMEM_INSTANTIATE_MODEL

}  // namespace hetmem
