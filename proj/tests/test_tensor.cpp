#include "doctest.h"

#include "hetmem/errors.hpp"
#include "hetmem/ops.hpp"
#include "hetmem/tensor.hpp"

using namespace hetmem;

TEST_CASE("tensor size matches shape") {
  Tensor<float> t(Shape{2, 3, 4}, 1.5f);
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(1) == 3);
  CHECK(t[23] == 1.5f);
  CHECK(t.bytes() == 24 * sizeof(float));
  CHECK(dtype_of<float>() == DType::fp32);
  CHECK(dtype_of<double>() == DType::fp64);
}

TEST_CASE("tensor rejects data of the wrong length") {
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>(Shape{3}).reshaped(Shape{2, 2}), ShapeError);
}

TEST_CASE("allocation tracker follows tensor lifetimes") {
  const std::size_t before = AllocationTracker::current_bytes();
  AllocationTracker::reset_peak();
  {
    Tensor<double> a(Shape{1000});
    CHECK(AllocationTracker::current_bytes() == before + 8000);
    {
      Tensor<float> b(Shape{500});
      CHECK(AllocationTracker::current_bytes() == before + 10000);
    }
    CHECK(AllocationTracker::current_bytes() == before + 8000);
  }
  CHECK(AllocationTracker::current_bytes() == before);
  CHECK(AllocationTracker::peak_bytes() == before + 10000);
  AllocationTracker::reset_peak();
  CHECK(AllocationTracker::peak_bytes() == before);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>(Shape{2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
}

TEST_CASE("unreached leaves get zero gradient") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>(Shape{2}, {1.0, 2.0}), true);
  Var<double> y = tape.leaf(Tensor<double>(Shape{3}, {1.0, 2.0, 3.0}), true);
  tape.backward(sum(x));
  CHECK(tape.grad(y) == Tensor<double>(Shape{3}));
  CHECK(tape.grad(x) == Tensor<double>(Shape{2}, {1.0, 1.0}));
}

TEST_CASE("a leaf used twice accumulates both contributions") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>(Shape{2}, {3.0, -1.0}), true);
  tape.backward(sum(mul(x, x)));
  CHECK(tape.grad(x) == Tensor<double>(Shape{2}, {6.0, -2.0}));
}
