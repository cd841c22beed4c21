#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lfa/tensor.hpp"

using namespace lfa;

TEST_CASE("shape element count and indexing are row-major NCHW") {
  Tensor t({2, 3, 4, 5}, 0.0f);
  CHECK(t.size() == 120);
  CHECK(t.index(0, 0, 0, 0) == 0);
  CHECK(t.index(0, 0, 0, 1) == 1);
  CHECK(t.index(0, 0, 1, 0) == 5);
  CHECK(t.index(0, 1, 0, 0) == 20);
  CHECK(t.index(1, 0, 0, 0) == 60);
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t.data()[119] == 7.0f);
}

TEST_CASE("construction from values keeps order and checks length") {
  Tensor t({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  CHECK(t.at(0, 0, 0, 0) == 1.0f);
  CHECK(t.at(0, 0, 1, 1) == 4.0f);
}

TEST_CASE("elementwise add and mul") {
  Tensor a({1, 2, 1, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor b({1, 2, 1, 2}, std::vector<float>{5, 6, 7, 8});
  Tensor sum = elementwise(EwKind::Add, a, b);
  Tensor prod = elementwise(EwKind::Mul, a, b);
  CHECK(sum.values() == std::vector<float>{6, 8, 10, 12});
  CHECK(prod.values() == std::vector<float>{5, 12, 21, 32});
}

TEST_CASE("elementwise broadcasts (N,C,1,1) over spatial extents") {
  Tensor a({1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  Tensor b({1, 2, 1, 1}, std::vector<float>{10, 100});
  Tensor prod = elementwise(EwKind::Mul, a, b);
  CHECK(prod.values() == std::vector<float>{10, 20, 30, 40, 500, 600, 700, 800});
}

TEST_CASE("elementwise rejects incompatible shapes") {
  Tensor a({1, 2, 2, 2}, 0.0f);
  Tensor b({1, 3, 2, 2}, 0.0f);
  CHECK_THROWS_AS(elementwise(EwKind::Add, a, b), ShapeError);
}

TEST_CASE("concat_channels stacks along C and validates extents") {
  Tensor a({1, 1, 1, 2}, std::vector<float>{1, 2});
  Tensor b({1, 2, 1, 2}, std::vector<float>{3, 4, 5, 6});
  Tensor c = concat_channels({a, b});
  CHECK(c.shape() == Shape{1, 3, 1, 2});
  CHECK(c.values() == std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor bad({1, 1, 2, 2}, 0.0f);
  CHECK_THROWS_AS(concat_channels({a, bad}), ShapeError);
}

TEST_CASE("sum_all accumulates in double") {
  Tensor t({1, 1, 1, 3}, std::vector<float>{1.5f, -0.5f, 2.0f});
  CHECK(sum_all(t) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("gradient buffer is lazily allocated and zeroable") {
  Tensor t({1, 1, 1, 2}, 0.0f);
  CHECK(!t.has_grad());
  t.grad()[0] = 3.0f;
  CHECK(t.has_grad());
  t.zero_grad();
  CHECK(t.grad()[0] == 0.0f);
  t.drop_grad();
  CHECK(!t.has_grad());
}

TEST_CASE("all_finite detects non-finite entries") {
  Tensor t({1, 1, 1, 2}, std::vector<float>{1.0f, 2.0f});
  CHECK(t.all_finite());
  t.data()[1] = std::numeric_limits<float>::infinity();
  CHECK(!t.all_finite());
}

TEST_CASE("fill_uniform stays in range and is seed-deterministic") {
  Tensor a({1, 1, 8, 8}, 0.0f), b({1, 1, 8, 8}, 0.0f);
  std::mt19937 r1(9), r2(9);
  fill_uniform(a, r1, -0.25f, 0.75f);
  fill_uniform(b, r2, -0.25f, 0.75f);
  CHECK(a.values() == b.values());
  for (float v : a.values()) {
    CHECK(v >= -0.25f);
    CHECK(v < 0.75f);
  }
}
