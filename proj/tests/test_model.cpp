#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "hetmem/model.hpp"

using namespace hetmem;

namespace {

std::vector<TokenId> random_tokens(std::size_t count, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> u(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> out(count);
  for (auto& t : out) t = u(rng);
  return out;
}

template <class T>
Tensor<T> run_logits(const ModelParams<T>& p, const ModelConfig& c, std::span<const TokenId> tokens,
                     MemoryManager<T>& mem) {
  Tape<T> tape;
  auto r = forward(bind(tape, p, false), c, tokens, mem);
  mem = r.memories;
  return r.logits.value();
}

template <class T>
Tensor<T> windowed_logits(const ModelParams<T>& p, const ModelConfig& c, std::span<const TokenId> tokens) {
  Tape<T> tape;
  return forward_windowed(bind(tape, p, false), c, tokens, 1).value();
}

// A config with enough memory at every layer to see a whole previous window,
// and relative distances long enough that nothing is clipped over 2n tokens.
ModelConfig recurrence_config(std::size_t n) {
  ModelConfig c = oracle::tiny_config(n, n);
  c.max_distance = 2 * n;
  c.init_scale = 0.3;
  return c;
}

std::vector<TokenId> span_of(const std::vector<TokenId>& v, std::size_t from, std::size_t count) {
  return {v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(from + count)};
}

}  // namespace

TEST_CASE("zero parameters give uniform logits") {
  ModelConfig c = oracle::tiny_config();
  const auto p = ModelParams<double>::zeros(c);
  MemoryManager<double> mem(c.memory, c.d_model, 1);
  for (int step = 0; step < 2; ++step) {
    const auto logits = run_logits(p, c, random_tokens(4, c.vocab, 5 + step), mem);
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == logits[0]);
  }
}

TEST_CASE("two single-token windows equal one two-token window") {
  ModelConfig c = recurrence_config(2);
  c.memory = MemoryConfig::make(2, 1, Arrangement::first, 1, 1, 1);
  const auto p = ModelParams<double>::init(c, 31);
  const auto tokens = random_tokens(2, c.vocab, 32);

  MemoryManager<double> streamed(c.memory, c.d_model, 1);
  run_logits(p, c, span_of(tokens, 0, 1), streamed);
  const auto last = run_logits(p, c, span_of(tokens, 1, 1), streamed);

  MemoryManager<double> fresh(c.memory, c.d_model, 1);
  const auto whole = run_logits(p, c, tokens, fresh);
  for (std::size_t v = 0; v < c.vocab; ++v) CHECK(std::abs(last[v] - whole[c.vocab + v]) < 1e-8);
}

TEST_CASE("logits at t ignore later tokens") {
  ModelConfig c = recurrence_config(6);
  const auto p = ModelParams<double>::init(c, 41);
  const auto tokens = random_tokens(6, c.vocab, 42);
  MemoryManager<double> primed(c.memory, c.d_model, 1);
  run_logits(p, c, random_tokens(6, c.vocab, 43), primed);

  auto m0 = primed;
  const auto base = run_logits(p, c, tokens, m0);
  for (std::size_t t_prime = 1; t_prime < tokens.size(); ++t_prime) {
    auto changed = tokens;
    changed[t_prime] = (changed[t_prime] + 3) % static_cast<TokenId>(c.vocab);
    auto m = primed;
    const auto out = run_logits(p, c, changed, m);
    for (std::size_t i = 0; i < t_prime * c.vocab; ++i) CHECK(out[i] == base[i]);
  }
}

TEST_CASE("streamed windows equal the whole sequence") {
  const std::size_t n = 4;
  ModelConfig c = recurrence_config(n);
  const auto p64 = ModelParams<double>::init(c, 51);
  const auto p32 = p64.convert<float>();
  const auto tokens = random_tokens(2 * n + 1, c.vocab, 52);
  const auto inputs = span_of(tokens, 0, 2 * n);
  const auto targets = span_of(tokens, 1, 2 * n);

  auto per_position = [&](auto& params, auto tag) {
    using T = decltype(tag);
    MemoryManager<T> mem(c.memory, c.d_model, 1);
    const auto a = run_logits(params, c, span_of(inputs, 0, n), mem);
    const auto b = run_logits(params, c, span_of(inputs, n, n), mem);
    auto streamed = token_nll(a, span_of(targets, 0, n));
    const auto second = token_nll(b, span_of(targets, n, n));
    streamed.insert(streamed.end(), second.begin(), second.end());
    MemoryManager<T> empty(c.memory, c.d_model, 1);
    const auto whole = token_nll(run_logits(params, c, inputs, empty), targets);
    return std::pair(streamed, whole);
  };

  const auto [s64, w64] = per_position(p64, double{});
  const auto [s32, w32] = per_position(p32, float{});
  for (std::size_t t = 0; t < 2 * n; ++t) {
    CHECK(std::abs(s64[t] - w64[t]) < 1e-10);
    CHECK(std::abs(s32[t] - w32[t]) < 1e-6);
  }
  // The second window really did use the memory.
  MemoryManager<double> none(MemoryConfig::make(2, 0, Arrangement::first, 0, 0, 0), c.d_model, 1);
  ModelConfig c0 = c;
  c0.memory = none.config();
  const auto cut = token_nll(run_logits(p64, c0, span_of(inputs, n, n), none), span_of(targets, n, n));
  CHECK(std::abs(cut[0] - s64[n]) > 1e-6);
}

TEST_CASE("zero capacity is exactly the windowed transformer") {
  ModelConfig c = recurrence_config(4);
  c.memory = MemoryConfig::make(2, 0, Arrangement::interleaved, 0, 0, 0);
  const auto p64 = ModelParams<double>::init(c, 61);
  const auto p32 = p64.convert<float>();
  MemoryManager<double> m64(c.memory, c.d_model, 1);
  MemoryManager<float> m32(c.memory, c.d_model, 1);
  for (std::uint64_t w = 0; w < 3; ++w) {
    const auto tokens = random_tokens(4, c.vocab, 62 + w);
    CHECK(run_logits(p64, c, tokens, m64) == windowed_logits(p64, c, tokens));
    CHECK(run_logits(p32, c, tokens, m32) == windowed_logits(p32, c, tokens));
  }
}

TEST_CASE("parameter count does not depend on memory lengths or placement") {
  ModelConfig c;  // desk defaults: l = 12
  const std::size_t expected = parameter_count(c);
  CHECK(expected == ModelParams<float>::init(c, 1).count());
  for (std::size_t k : {12, 6, 2, 1, 0}) {
    for (Arrangement pat : {Arrangement::interleaved, Arrangement::first, Arrangement::last, Arrangement::middle}) {
      ModelConfig v = c;
      v.memory = MemoryConfig::make(12, k, pat, 384, 768, 32);
      CHECK(parameter_count(v) == expected);
      CHECK(ModelParams<float>::init(v, 2).count() == expected);
    }
  }
  ModelConfig tied = c;
  tied.tie_embeddings = true;
  CHECK(parameter_count(tied) == expected - c.d_model * c.vocab);
}

TEST_CASE("end-to-end gradients of the tiny model") {
  ModelConfig c = oracle::tiny_config();
  c.init_scale = 0.3;
  auto p = ModelParams<double>::init(c, 71);
  // Non-trivial gains and biases.
  std::mt19937_64 rng(72);
  p.for_each([&rng](const std::string& name, Tensor<double>& t) {
    if (name.ends_with("gain")) t = oracle::random_tensor(t.shape(), rng, 0.5, 1.5);
    if (name.ends_with("bias")) t = oracle::random_tensor(t.shape(), rng, -0.3, 0.3);
  });
  MemoryManager<double> mem(c.memory, c.d_model, 1);
  run_logits(p, c, random_tokens(4, c.vocab, 73), mem);
  REQUIRE(mem.layer(0).size() == 4);

  const auto tokens = random_tokens(5, c.vocab, 74);
  const auto r = oracle::check_model_gradients(c, p, mem, span_of(tokens, 0, 4), span_of(tokens, 1, 4));
  INFO(r.where << " rel " << r.max_rel << " abs " << r.max_abs);
  CHECK(r.checked == p.count());
  CHECK(r.max_rel < 1e-5);
}

TEST_CASE("loss and bits per character") {
  Tape<double> tape;
  const std::vector<TokenId> targets{3, 200, 17};
  const auto uniform = loss(tape.leaf(Tensor<double>(Shape{3, 256}, 0.25)), targets).value()[0];
  CHECK(std::abs(uniform - std::log(256.0)) < 1e-12);

  Tensor<double> sharp(Shape{3, 256}, -50.0);
  for (std::size_t i = 0; i < 3; ++i) sharp[i * 256 + static_cast<std::size_t>(targets[i])] = 50.0;
  CHECK(loss(tape.leaf(sharp), targets).value()[0] < 1e-30);

  std::mt19937_64 rng(81);
  const auto logits = oracle::random_tensor({3, 256}, rng, -4.0, 4.0);
  CHECK(std::abs(loss(tape.leaf(logits), targets).value()[0] - oracle::cross_entropy(logits, {3, 200, 17})) < 1e-10);

  CHECK(bpc(std::log(2.0)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(bpc(0.0) == 0.0);
  CHECK(std::abs(bpc(std::log(256.0)) - 8.0) < 1e-12);
}

TEST_CASE("token ids outside the vocabulary are rejected") {
  ModelConfig c = oracle::tiny_config();
  const auto p = ModelParams<double>::init(c, 91);
  MemoryManager<double> mem(c.memory, c.d_model, 1);
  const std::vector<TokenId> bad{1, 2, 11, 3};
  CHECK_THROWS_AS(run_logits(p, c, bad, mem), std::out_of_range);
  const std::vector<TokenId> negative{1, -1, 2, 3};
  CHECK_THROWS_AS(run_logits(p, c, negative, mem), std::out_of_range);
}
