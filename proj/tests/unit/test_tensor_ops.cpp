#include <cmath>
#include <limits>

#include "attnsteg/errors.hpp"
#include "attnsteg/tensor.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace attnsteg;
using T64 = Tensor<double>;

TEST_CASE("tensor: construction validates shapes") {
  CHECK_THROWS_AS(T64::zeros({2, 0}), DimensionError);
  CHECK_THROWS_AS(T64::from({2, 2}, {1, 2, 3}), DimensionError);
  auto t = T64::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at({1, 2}) == 6);
  CHECK(t.rank() == 2);
  CHECK(T64::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(t.item(), DimensionError);
}

TEST_CASE("matmul: matches a triple loop") {
  Rng rng(1);
  auto a = testutil::random_tensor<double>(rng, {4, 7}, 1.0, false);
  auto b = testutil::random_tensor<double>(rng, {7, 3}, 1.0, false);
  auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{4, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  auto bt = testutil::random_tensor<double>(rng, {5, 7}, 1.0, false);
  auto d = matmul_nt(a, bt);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at({i, k}) * bt.at({j, k});
      CHECK(d.at({i, j}) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("elementwise: broadcasting a bias over the last axis") {
  auto x = T64::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = T64::from({3}, {10, 20, 30});
  auto y = add(x, b);
  CHECK(y.at({1, 2}) == 36);
  CHECK(sub(x, b).at({0, 0}) == -9);
  CHECK(mul(x, b).at({1, 1}) == 100);
  CHECK_THROWS_AS(add(x, T64::zeros({2})), DimensionError);
  auto s = scale_rows(x, T64::from({2}, {2, -1}));
  CHECK(s.at({0, 2}) == 6);
  CHECK(s.at({1, 0}) == -4);
}

TEST_CASE("activations: closed forms and clamping") {
  auto x = T64::from({4}, {-2, 0, 0.5, 3});
  auto s = sigmoid(x);
  auto t = attnsteg::tanh(x);
  auto r = relu(x);
  for (std::size_t i = 0; i < 4; ++i) {
    const double v = x.values()[i];
    CHECK(s.values()[i] == doctest::Approx(1 / (1 + std::exp(-v))));
    CHECK(t.values()[i] == doctest::Approx(std::tanh(v)));
    CHECK(r.values()[i] == std::max(0.0, v));
  }
  auto big = sigmoid(T64::from({2}, {1e6, -1e6}));
  CHECK(std::isfinite(big.values()[0]));
  CHECK(big.values()[1] >= 0);
}

TEST_CASE("softmax: rows sum to one and survive large inputs") {
  auto x = T64::from({2, 3}, {1, 2, 3, 1000, 1001, 1002});
  auto p = softmax(x);
  const double e = std::exp(1.0), e2 = std::exp(2.0);
  const double z = 1 + e + e2;
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(p.at({r, 0}) == doctest::Approx(1 / z));
    CHECK(p.at({r, 2}) == doctest::Approx(e2 / z));
  }
}

TEST_CASE("masked softmax: exact zeros at padding") {
  auto x = T64::from({2, 4}, {1, 2, 3, 4, 5, 1, 9, 9});
  std::vector<std::size_t> len{4, 2};
  auto p = masked_softmax(x, len);
  CHECK(p.at({1, 2}) == 0.0);
  CHECK(p.at({1, 3}) == 0.0);
  CHECK(p.at({1, 0}) + p.at({1, 1}) == doctest::Approx(1.0));
  CHECK(p.at({1, 0}) == doctest::Approx(std::exp(4.0) / (std::exp(4.0) + 1)));
  std::vector<std::size_t> zero{0, 2}, too_long{5, 2};
  CHECK_THROWS_AS(masked_softmax(x, zero), ContractError);
  CHECK_THROWS_AS(masked_softmax(x, too_long), ContractError);
}

TEST_CASE("concat and slice are inverse") {
  Rng rng(2);
  auto a = testutil::random_tensor<double>(rng, {2, 3, 4}, 1.0, false);
  auto b = testutil::random_tensor<double>(rng, {2, 3, 2}, 1.0, false);
  auto c = concat<double>({a, b}, 2);
  REQUIRE(c.shape() == Shape{2, 3, 6});
  auto a2 = slice(c, 2, 0, 4);
  auto b2 = slice(c, 2, 4, 6);
  CHECK(testutil::values_of(a2) == testutil::values_of(a));
  CHECK(testutil::values_of(b2) == testutil::values_of(b));
  CHECK(c.at({1, 2, 5}) == b.at({1, 2, 1}));
  CHECK_THROWS_AS(concat<double>({a, b}, 1), DimensionError);
  CHECK_THROWS_AS(slice(c, 2, 4, 9), DimensionError);
}

TEST_CASE("gather_rows: out-of-range ids are rejected") {
  auto table = T64::from({3, 2}, {0, 0, 1, 1, 2, 2});
  std::vector<std::int32_t> ids{2, 0};
  CHECK(gather_rows(table, ids).at({0, 1}) == 2);
  std::vector<std::int32_t> bad{3};
  CHECK_THROWS_AS(gather_rows(table, bad), OutOfVocabularyError);
  std::vector<std::int32_t> neg{-1};
  CHECK_THROWS_AS(gather_rows(table, neg), OutOfVocabularyError);
}

TEST_CASE("autograd: shared subexpressions accumulate") {
  auto x = T64::from({2}, {3, -1}, true);
  auto y = mul(x, x);  // x used twice
  auto loss = sum(add(y, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(7));
  CHECK(x.grad()[1] == doctest::Approx(-1));
  backward(sum(mul(y, y)));  // leaf grads accumulate across calls
  CHECK(x.grad()[0] == doctest::Approx(7 + 4 * 27));
}

TEST_CASE("autograd: lineage only where gradients are required") {
  auto a = T64::from({2}, {1, 2});
  auto b = T64::from({2}, {3, 4}, true);
  auto c = add(a, a);
  CHECK(c.is_leaf());
  CHECK_THROWS_AS(backward(sum(c)), ContractError);
  {
    NoGradGuard guard;
    auto d = mul(a, b);
    CHECK(d.is_leaf());
    CHECK_FALSE(d.requires_grad());
  }
  auto e = mul(a, b);
  CHECK_FALSE(e.is_leaf());
  CHECK_THROWS_AS(backward(e), ContractError);
  CHECK_THROWS_AS(e.mutable_values(), ContractError);
  backward(sum(e));
  CHECK_FALSE(a.has_grad());
  CHECK(b.grad()[1] == 2);
}

TEST_CASE("autograd: detach cuts the graph") {
  auto x = T64::from({1}, {2}, true);
  auto y = mul(x, x).detach(true);
  backward(sum(mul(y, x)));
  CHECK(x.grad()[0] == doctest::Approx(4));
}

TEST_CASE("all_finite flags NaN and Inf") {
  CHECK(all_finite(T64::from({2}, {1, 2})));
  CHECK_FALSE(all_finite(T64::from({2}, {1, std::numeric_limits<double>::quiet_NaN()})));
  CHECK_FALSE(all_finite(T64::from({2}, {std::numeric_limits<double>::infinity(), 0})));
}
