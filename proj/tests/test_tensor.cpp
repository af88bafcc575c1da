#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "car/tensor.hpp"

using car::Tensor;

TEST_CASE("tensor: construction zero-fills and sizes by shape product") {
  Tensor t({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.size() == 24);
  CHECK(t.extent(0) == 2);
  CHECK(t.extent(1) == 3);
  CHECK(t.extent(2) == 4);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
}

TEST_CASE("tensor: empty shape has no elements") {
  Tensor t;
  CHECK(t.rank() == 0);
  CHECK(t.size() == 0);
}

TEST_CASE("tensor: from_data keeps values and rejects length mismatch") {
  Tensor t = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(t.at(0, 0) == 1.0);
  CHECK(t.at(0, 1) == 2.0);
  CHECK(t.at(1, 0) == 3.0);
  CHECK(t.at(1, 1) == 4.0);
  CHECK_THROWS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}));
}

TEST_CASE("tensor: row-major indexing matches flat order") {
  Tensor t({2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  CHECK(t.at(0, 2) == 2.0);
  CHECK(t.at(1, 0) == 3.0);

  Tensor u({2, 2, 2, 2});
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = static_cast<double>(i);
  CHECK(u.at(1, 0, 1, 0) == 10.0);
  CHECK(u.at(0, 1, 1, 1) == 7.0);
}

TEST_CASE("tensor: full and fill") {
  Tensor t = Tensor::full({3}, 2.5);
  CHECK(t[0] == 2.5);
  CHECK(t[2] == 2.5);
  t.fill(-1.0);
  CHECK(t[1] == -1.0);
}

TEST_CASE("tensor: same_shape compares extents exactly") {
  CHECK(Tensor({2, 3}).same_shape(Tensor({2, 3})));
  CHECK_FALSE(Tensor({2, 3}).same_shape(Tensor({3, 2})));
  CHECK_FALSE(Tensor({2, 3}).same_shape(Tensor({2, 3, 1})));
}

TEST_CASE("tensor: all_finite flags NaN and infinity") {
  Tensor t({4});
  CHECK(t.all_finite());
  t[2] = std::nan("");
  CHECK_FALSE(t.all_finite());
  t[2] = 0.0;
  t[3] = INFINITY;
  CHECK_FALSE(t.all_finite());
}
