#include <cmath>

#include "doctest.h"
#include "dp2fl/error.hpp"
#include "dp2fl/random.hpp"
#include "dp2fl/tensor.hpp"

using namespace dp2fl;

TEST_CASE("matvec and its transpose agree with loops") {
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(matvec(m, Vector{1, 0, -1}) == Vector{-2, -2});
  CHECK(matvec_transposed(m, Vector{1, 2}) == Vector{9, 12, 15});
  CHECK_THROWS_AS(matvec(m, Vector{1, 2}), ShapeError);
}

TEST_CASE("dot, norm and concat") {
  CHECK(dot(Vector{1, 2, 3}, Vector{4, 5, 6}) == 32);
  CHECK(norm2(Vector{3, 4}) == 5);
  CHECK(concat(Vector{1}, Vector{2, 3}) == Vector{1, 2, 3});
  CHECK(all_finite(Vector{1, 2}));
  CHECK_FALSE(all_finite(Vector{1, std::nan("")}));
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(7, {stream::kTask}) == derive_seed(7, {stream::kTask}));
  CHECK(derive_seed(7, {stream::kTask}) != derive_seed(7, {stream::kBackbone}));
  CHECK(derive_seed(7, {stream::kTask}) != derive_seed(8, {stream::kTask}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
}
