#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "hetmem/attention.hpp"
#include "hetmem/errors.hpp"

using namespace hetmem;
using oracle::random_tensor;

namespace {

Tensor<double> run_attend(const Tensor<double>& window, const Tensor<double>* memory,
                          const AttentionParams<double>& p, std::size_t heads) {
  Tape<double> tape;
  AttentionInput<double> in{tape.leaf(window), memory};
  AttentionOptions opts;
  opts.heads = heads;
  return attend(in, bind(tape, p, false), opts).value();
}

double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("attend matches the per-position oracle") {
  std::mt19937_64 rng(17);
  const std::size_t d = 4;
  for (std::size_t heads : {1, 2}) {
    for (std::size_t n = 1; n <= 4; ++n) {
      for (std::size_t m = 0; m <= 4; ++m) {
        // r_max = 3 forces clipping for the longer distances.
        const auto p = oracle::random_attention_params(d, heads, 3, rng);
        const auto window = random_tensor({n, d}, rng);
        const auto memory = random_tensor({m, d}, rng);
        const Tensor<double>* mem = m > 0 ? &memory : nullptr;
        INFO("heads " << heads << " n " << n << " m " << m);
        CHECK(max_diff(run_attend(window, mem, p, heads), oracle::attention(window, mem, p, heads, true)) < 1e-10);
      }
    }
  }
}

TEST_CASE("batched lanes match separate calls") {
  std::mt19937_64 rng(18);
  const std::size_t d = 4, n = 3, m = 2, heads = 2;
  const auto p = oracle::random_attention_params(d, heads, 8, rng);
  const auto window = random_tensor({2, n, d}, rng);
  const auto memory = random_tensor({2, m, d}, rng);
  const auto both = run_attend(window, &memory, p, heads);
  for (std::size_t lane = 0; lane < 2; ++lane) {
    Tensor<double> w(Shape{n, d}, window.data().subspan(lane * n * d, n * d));
    Tensor<double> mm(Shape{m, d}, memory.data().subspan(lane * m * d, m * d));
    const auto want = oracle::attention(w, &mm, p, heads, true);
    for (std::size_t i = 0; i < n * d; ++i) CHECK(std::abs(both[lane * n * d + i] - want[i]) < 1e-12);
  }
}

TEST_CASE("single token without memory is its value projection through the output") {
  std::mt19937_64 rng(19);
  const std::size_t d = 4;
  const auto p = oracle::random_attention_params(d, 2, 2, rng);
  const auto x = random_tensor({1, d}, rng);
  const auto got = run_attend(x, nullptr, p, 2);
  const auto v = oracle::matmul(x.ptr(), p.value.ptr(), 1, d, d);
  const auto want = oracle::matmul(v.data(), p.output.ptr(), 1, d, d);
  for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("causality: later rows do not change earlier outputs") {
  std::mt19937_64 rng(20);
  const std::size_t d = 8, n = 5, m = 3;
  const auto p = oracle::random_attention_params(d, 2, 10, rng);
  const auto memory = random_tensor({m, d}, rng);
  auto window = random_tensor({n, d}, rng);
  const auto base = run_attend(window, &memory, p, 2);
  for (std::size_t t_prime = 1; t_prime < n; ++t_prime) {
    auto changed = window;
    for (std::size_t i = 0; i < d; ++i) changed[t_prime * d + i] += 0.75;
    const auto out = run_attend(changed, &memory, p, 2);
    for (std::size_t t = 0; t < t_prime; ++t)
      for (std::size_t i = 0; i < d; ++i) CHECK(out[t * d + i] == base[t * d + i]);
  }
  // n = 2, no memory: position 0 ignores window row 1.
  auto two = random_tensor({2, d}, rng);
  const auto a = run_attend(two, nullptr, p, 2);
  for (std::size_t i = 0; i < d; ++i) two[d + i] = -two[d + i] + 3.0;
  const auto b = run_attend(two, nullptr, p, 2);
  for (std::size_t i = 0; i < d; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("memory rows are constants; parameters still learn through them") {
  std::mt19937_64 rng(21);
  const std::size_t d = 4, n = 2, m = 3, heads = 2;
  const auto p = oracle::random_attention_params(d, heads, 6, rng);
  const auto window = random_tensor({n, d}, rng);
  const auto memory = random_tensor({m, d}, rng);

  Tape<double> tape;
  AttentionVars<double> vars = bind(tape, p, true);
  Var<double> w = tape.leaf(window, true);
  const std::size_t first_new = tape.size();
  Var<double> out = attend(AttentionInput<double>{w, &memory}, vars, AttentionOptions{heads, true, 0.0});
  tape.backward(oracle::probe(out, 3));

  // The memory enters as a tape node of its own that never requires grad.
  bool found = false;
  for (std::size_t id = first_new; id < tape.size(); ++id) {
    Var<double> v(&tape, id);
    if (v.value().shape() == Shape{1, m, d} &&
        std::equal(memory.data().begin(), memory.data().end(), v.value().data().begin())) {
      found = true;
      CHECK_FALSE(v.requires_grad());
      CHECK(tape.grad(v) == Tensor<double>(Shape{1, m, d}));
    }
  }
  CHECK(found);

  // Key and value weights depend on the memory rows: their gradient differs
  // from the one obtained without memory, and matches finite differences.
  Tape<double> bare;
  AttentionVars<double> bare_vars = bind(bare, p, true);
  Var<double> bw = bare.leaf(window, true);
  bare.backward(oracle::probe(attend(AttentionInput<double>{bw, nullptr}, bare_vars, AttentionOptions{heads, true, 0.0}), 3));
  CHECK_FALSE(tape.grad(vars.key) == bare.grad(bare_vars.key));

  const auto r = oracle::check_gradients(
      {window, p.query, p.key, p.value, p.output, p.rel_bias},
      [&memory, heads](Tape<double>&, const std::vector<Var<double>>& v) {
        AttentionVars<double> av{v[1], v[2], v[3], v[4], v[5], std::nullopt, std::nullopt};
        return oracle::probe(attend(AttentionInput<double>{v[0], &memory}, av, AttentionOptions{heads, true, 0.0}), 3);
      });
  INFO(r.where);
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("attention with pre-norm passes finite differences") {
  std::mt19937_64 rng(22);
  const std::size_t d = 4, n = 3, m = 2, heads = 2;
  const auto p = oracle::random_attention_params(d, heads, 3, rng);
  const auto memory = random_tensor({2, m, d}, rng);
  const auto r = oracle::check_gradients(
      {random_tensor({2, n, d}, rng), p.query, p.key, p.value, p.output, p.rel_bias, random_tensor({d}, rng, 0.5, 1.5),
       random_tensor({d}, rng)},
      [&memory, heads](Tape<double>&, const std::vector<Var<double>>& v) {
        AttentionVars<double> av{v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
        return oracle::probe(attend(AttentionInput<double>{v[0], &memory}, av, AttentionOptions{heads, true, 0.0}), 4);
      });
  INFO(r.where);
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("output depends on memory content, not on where it came from") {
  std::mt19937_64 rng(23);
  const std::size_t d = 4, n = 3, heads = 2;
  const auto p = oracle::random_attention_params(d, heads, 5, rng);
  const auto seg_a = random_tensor({n, d}, rng);
  const auto seg_b = random_tensor({n, d}, rng);
  const auto seg_c = random_tensor({n, d}, rng);
  const auto cur = random_tensor({n, d}, rng);

  // History 1: b then c. History 2: a, b, c. With capacity n both leave c.
  LayerMemory<double> one(0, n, d, 1);
  one.update(seg_b);
  one.update(seg_c);
  LayerMemory<double> two(0, n, d, 1);
  two.update(seg_a);
  two.update(seg_b);
  two.update(seg_c);
  const auto m1 = one.rows().reshaped(Shape{n, d});
  const auto m2 = two.rows().reshaped(Shape{n, d});
  CHECK(run_attend(cur, &m1, p, heads) == run_attend(cur, &m2, p, heads));
}

TEST_CASE("relative bias clips long distances") {
  Tape<double> tape;
  Tensor<double> table(Shape{1, 3}, {10, 20, 30});  // max distance 2
  const auto b = relative_position_bias(tape.leaf(table), 2, 3).value();
  CHECK(b.shape() == Shape{1, 2, 5});
  // Query 0 sits at key index 3: distances 3,2,1,0 then masked.
  CHECK(b[0] == 30);
  CHECK(b[1] == 30);
  CHECK(b[2] == 20);
  CHECK(b[3] == 10);
  CHECK(std::isinf(b[4]));
  CHECK(b[5 + 4] == 10);
  CHECK(b[5 + 0] == 30);
}

TEST_CASE("attention_flops") {
  CHECK(attention_flops(384, 2304) == 1'032'192);
  CHECK(attention_flops(1, 0) == 1);
  CHECK(attention_flops(384, 128) == 196'608);
  for (std::uint64_t n : {1, 7, 64}) {
    for (std::uint64_t m = 0; m < 50; ++m) CHECK(attention_flops(n, m + 1) > attention_flops(n, m));
  }
}

TEST_CASE("attend rejects inconsistent shapes") {
  std::mt19937_64 rng(24);
  const auto p = oracle::random_attention_params(4, 2, 3, rng);
  const auto window = random_tensor({2, 4}, rng);
  const auto bad_memory = random_tensor({3, 5}, rng);
  CHECK_THROWS_AS(run_attend(window, &bad_memory, p, 2), ShapeError);
  CHECK_THROWS_AS(run_attend(window, nullptr, p, 3), ShapeError);
  CHECK_THROWS_AS(run_attend(random_tensor({2, 6}, rng), nullptr, p, 2), ShapeError);
}
