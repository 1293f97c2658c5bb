#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "hetmem/errors.hpp"
#include "hetmem/ops.hpp"

using namespace hetmem;
using oracle::random_tensor;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor<double> eval1(Tensor<double> x, Var<double> (*f)(Var<double>)) {
  Tape<double> tape;
  return f(tape.leaf(std::move(x))).value();
}

void require_grad_ok(const oracle::GradCheck& r, double tol = 1e-6) {
  INFO("worst at " << r.where << ", abs " << r.max_abs);
  CHECK(r.checked > 0);
  CHECK(r.max_rel < tol);
}

}  // namespace

TEST_CASE("matmul small cases") {
  Tape<double> tape;
  auto id = tape.leaf(Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}));
  auto m = tape.leaf(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
  CHECK(matmul(id, m).value() == Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
  auto row = tape.leaf(Tensor<double>(Shape{1, 2}, {1, 0}));
  auto col = tape.leaf(Tensor<double>(Shape{2, 1}, {2, 5}));
  CHECK(matmul(row, col).value() == Tensor<double>(Shape{1, 1}, {2}));
}

TEST_CASE("matmul matches the triple loop") {
  std::mt19937_64 rng(7);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{3, 4, 2}, {16, 16, 16}, {1, 7, 13}, {9, 1, 5}}) {
    const auto a = random_tensor({m, k}, rng);
    const auto b = random_tensor({k, n}, rng);
    Tape<double> tape;
    const auto got = matmul(tape.leaf(a), tape.leaf(b)).value();
    const auto want = oracle::matmul(a.ptr(), b.ptr(), m, k, n);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("batched matmul and matmul_nt match per-slice triple loops") {
  std::mt19937_64 rng(8);
  const auto a = random_tensor({2, 3, 4, 5}, rng);
  const auto b = random_tensor({2, 3, 5, 6}, rng);
  const auto bt = random_tensor({2, 3, 6, 5}, rng);
  Tape<double> tape;
  const auto c = matmul(tape.leaf(a), tape.leaf(b)).value();
  const auto cnt = matmul_nt(tape.leaf(a), tape.leaf(bt)).value();
  CHECK(c.shape() == Shape{2, 3, 4, 6});
  for (std::size_t s = 0; s < 6; ++s) {
    const auto want = oracle::matmul(a.ptr() + s * 20, b.ptr() + s * 30, 4, 5, 6);
    std::vector<double> tr(30);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 5; ++j) tr[j * 6 + i] = bt[s * 30 + i * 5 + j];
    const auto want_nt = oracle::matmul(a.ptr() + s * 20, tr.data(), 4, 5, 6);
    for (std::size_t i = 0; i < 24; ++i) {
      CHECK(std::abs(c[s * 24 + i] - want[i]) < 1e-12);
      CHECK(std::abs(cnt[s * 24 + i] - want_nt[i]) < 1e-12);
    }
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>(Shape{2, 3}));
  auto b = tape.leaf(Tensor<double>(Shape{2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  auto c = tape.leaf(Tensor<double>(Shape{3, 3, 2}));
  auto d = tape.leaf(Tensor<double>(Shape{2, 2, 3}));
  CHECK_THROWS_AS(matmul(c, d), ShapeError);
}

TEST_CASE("softmax examples") {
  auto sm = [](Var<double> x) { return softmax(x, 0); };
  CHECK(eval1(Tensor<double>(Shape{2}, {0, 0}), sm) == Tensor<double>(Shape{2}, {0.5, 0.5}));
  const auto p = eval1(Tensor<double>(Shape{2}, {1, 0}), sm);
  const double e = std::numbers::e;
  CHECK(std::abs(p[0] - e / (e + 1)) < 1e-15);
  CHECK(std::abs(p[1] - 1 / (e + 1)) < 1e-15);
  CHECK(eval1(Tensor<double>(Shape{2}, {5, -kInf}), sm) == Tensor<double>(Shape{2}, {1, 0}));
}

TEST_CASE("softmax of a fully masked row is an error") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>(Shape{2, 2}, {0, 1, -kInf, -kInf}));
  CHECK_THROWS(softmax(x, 1));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({5, 6, 7}, rng, -30, 30);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tape<double> tape;
    const auto p = softmax(tape.leaf(x), axis).value();
    const std::size_t len = x.dim(axis);
    const std::size_t stride = axis == 2 ? 1 : axis == 1 ? 7 : 42;
    for (std::size_t base = 0; base < x.size(); ++base) {
      if ((base / stride) % len != 0) continue;
      double s = 0;
      for (std::size_t i = 0; i < len; ++i) s += p[base + i * stride];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("backward examples") {
  Tape<double> tape;
  auto w = tape.leaf(Tensor<double>(Shape{2, 3}, {1, -2, 3, 0.5, 7, -1}), true);
  tape.backward(sum(w));
  CHECK(tape.grad(w) == Tensor<double>(Shape{2, 3}, 1.0));

  std::mt19937_64 rng(5);
  Tape<double> t2;
  auto x = t2.leaf(random_tensor({6}, rng), true);
  t2.backward(sum(softmax(x, 0)));
  const Tensor<double> gx = t2.grad(x);
  for (double g : gx.data()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("repeated backward is bit-identical") {
  std::mt19937_64 rng(11);
  Tape<double> tape;
  auto a = tape.leaf(random_tensor({4, 5}, rng), true);
  auto b = tape.leaf(random_tensor({5, 3}, rng), true);
  auto loss = oracle::probe(gelu(matmul(a, b)), 1);
  tape.backward(loss);
  const auto ga = tape.grad(a);
  const auto gb = tape.grad(b);
  tape.backward(loss);
  CHECK(tape.grad(a) == ga);
  CHECK(tape.grad(b) == gb);
}

TEST_CASE("finite differences: every op") {
  std::mt19937_64 rng(2024);
  using V = std::vector<Var<double>>;

  SUBCASE("matmul shared and batched") {
    require_grad_ok(oracle::check_gradients({random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng)},
                                            [](Tape<double>&, const V& v) { return oracle::probe(matmul(v[0], v[1]), 1); }));
    require_grad_ok(oracle::check_gradients({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
                                            [](Tape<double>&, const V& v) { return oracle::probe(matmul(v[0], v[1]), 2); }));
    require_grad_ok(oracle::check_gradients({random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)},
                                            [](Tape<double>&, const V& v) { return oracle::probe(matmul_nt(v[0], v[1]), 3); }));
  }
  SUBCASE("add, mul, scale") {
    require_grad_ok(oracle::check_gradients({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                                            [](Tape<double>&, const V& v) { return oracle::probe(add(v[0], v[1]), 4); }));
    require_grad_ok(oracle::check_gradients({random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)},
                                            [](Tape<double>&, const V& v) { return oracle::probe(add(v[0], v[1]), 5); }));
    require_grad_ok(oracle::check_gradients({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                                            [](Tape<double>&, const V& v) { return oracle::probe(mul(v[0], v[1]), 6); }));
    require_grad_ok(oracle::check_gradients({random_tensor({3, 4}, rng)},
                                            [](Tape<double>&, const V& v) { return oracle::probe(scale(v[0], -0.37), 7); }));
  }
  SUBCASE("sum and mean") {
    require_grad_ok(oracle::check_gradients({random_tensor({3, 4}, rng)},
                                            [](Tape<double>&, const V& v) { return mean(mul(v[0], v[0])); }));
  }
  SUBCASE("concat and slice") {
    require_grad_ok(oracle::check_gradients(
        {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)}, [](Tape<double>&, const V& v) {
          const std::array<Var<double>, 2> parts{v[0], v[1]};
          return oracle::probe(concat<double>(parts, 1), 8);
        }));
    require_grad_ok(oracle::check_gradients({random_tensor({4, 6}, rng)}, [](Tape<double>&, const V& v) {
      return oracle::probe(slice(v[0], 1, 2, 5), 9);
    }));
  }
  SUBCASE("transpose and reshape") {
    require_grad_ok(oracle::check_gradients({random_tensor({2, 3, 4, 2}, rng)}, [](Tape<double>&, const V& v) {
      return oracle::probe(transpose(v[0], 1, 3), 10);
    }));
    require_grad_ok(oracle::check_gradients({random_tensor({2, 6}, rng)}, [](Tape<double>&, const V& v) {
      return oracle::probe(reshape(v[0], Shape{3, 4}), 11);
    }));
  }
  SUBCASE("softmax with and without masking") {
    require_grad_ok(oracle::check_gradients({random_tensor({3, 5}, rng)}, [](Tape<double>&, const V& v) {
      return oracle::probe(softmax(v[0], 1), 12);
    }));
    require_grad_ok(oracle::check_gradients({random_tensor({4, 3}, rng)}, [](Tape<double>&, const V& v) {
      return oracle::probe(softmax(v[0], 0), 13);
    }));
    require_grad_ok(oracle::check_gradients({random_tensor({3, 3}, rng)}, [](Tape<double>& t, const V& v) {
      Tensor<double> mask(Shape{3, 3}, {0, -kInf, -kInf, 0, 0, -kInf, 0, 0, 0});
      return oracle::probe(softmax(add(v[0], t.leaf(mask)), 1), 14);
    }));
  }
  SUBCASE("layer norm") {
    require_grad_ok(oracle::check_gradients(
        {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
        [](Tape<double>&, const V& v) { return oracle::probe(layer_norm(v[0], v[1], v[2]), 15); }));
  }
  SUBCASE("gelu and relu") {
    require_grad_ok(oracle::check_gradients({random_tensor({4, 5}, rng, -3, 3)}, [](Tape<double>&, const V& v) {
      return oracle::probe(gelu(v[0]), 16);
    }));
    // Inputs kept away from the kink at 0.
    Tensor<double> x = random_tensor({4, 5}, rng);
    for (double& e : x.data()) e = e < 0 ? e - 0.1 : e + 0.1;
    require_grad_ok(oracle::check_gradients({x}, [](Tape<double>&, const V& v) { return oracle::probe(relu(v[0]), 17); }));
  }
  SUBCASE("embedding") {
    const std::vector<TokenId> ids = {3, 0, 3, 4, 1};
    require_grad_ok(oracle::check_gradients({random_tensor({5, 3}, rng)}, [&ids](Tape<double>&, const V& v) {
      return oracle::probe(embedding(v[0], ids), 18);
    }));
  }
  SUBCASE("cross entropy") {
    const std::vector<TokenId> targets = {2, 0, 4};
    require_grad_ok(oracle::check_gradients({random_tensor({3, 5}, rng, -2, 2)}, [&targets](Tape<double>&, const V& v) {
      return cross_entropy(v[0], targets);
    }));
  }
}

TEST_CASE("cross entropy matches direct summation") {
  std::mt19937_64 rng(99);
  const auto logits = random_tensor({7, 11}, rng, -4, 4);
  const std::vector<TokenId> targets = {0, 10, 3, 3, 7, 1, 5};
  Tape<double> tape;
  const double got = cross_entropy(tape.leaf(logits), targets).value()[0];
  CHECK(std::abs(got - oracle::cross_entropy(logits, std::vector<int>(targets.begin(), targets.end()))) < 1e-10);
  const auto per = token_nll(logits, targets);
  double total = 0;
  for (double x : per) total += x;
  CHECK(std::abs(total / 7 - got) < 1e-12);
}

TEST_CASE("embedding rejects an out-of-range id") {
  Tape<double> tape;
  auto table = tape.leaf(Tensor<double>(Shape{4, 2}));
  const std::vector<TokenId> ids = {1, 4};
  CHECK_THROWS_AS(embedding(table, ids), std::out_of_range);
}

TEST_CASE("dropout is the identity at rate zero and preserves scale otherwise") {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>(Shape{20000}, 1.0));
  CHECK(dropout(x, 0.0, rng).value() == x.value());
  const auto y = dropout(x, 0.25, rng).value();
  double s = 0;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    s += v;
    zeros += v == 0.0;
  }
  CHECK(std::abs(s / 20000 - 1.0) < 0.03);
  CHECK(std::abs(static_cast<double>(zeros) / 20000 - 0.25) < 0.02);
}

TEST_CASE("shared gradient suite, including dropout and attention") {
  for (const auto& c : oracle::op_gradient_suite(7)) {
    INFO(c.name << " worst at " << c.result.where);
    CHECK(c.result.max_rel < 1e-6);
  }
}
