#include <doctest.h>

#include "mtswin/ops.hpp"
#include "mtswin/tensor.hpp"
#include "test_util.hpp"

using namespace mtswin;

TEST_CASE("tensor construction and invariants") {
  auto t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.shape() == Shape{2, 3});

  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.f, 2.f, 3.f}), DimensionError);

  auto s = Tensor::scalar(4.f);
  CHECK(s.item() == 4.f);
  CHECK_THROWS_AS(t.item(), DimensionError);
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42), d(43);
  CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("backward populates grads and accumulates across calls") {
  auto x = Tensor::from_data({3}, {1.f, 2.f, 3.f}, true);

  SUBCASE("sum gives ones") {
    auto loss = sum(x);
    backward(loss);
    for (float g : x.grad()) CHECK(g == 1.f);
  }

  SUBCASE("sum of squares gives 2x") {
    auto loss = sum(mul(x, x));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.f));
    CHECK(x.grad()[1] == doctest::Approx(4.f));
    CHECK(x.grad()[2] == doctest::Approx(6.f));
  }

  SUBCASE("repeated backward sums into leaf grads") {
    auto loss = sum(x);
    backward(loss);
    backward(loss);
    for (float g : x.grad()) CHECK(g == 2.f);
  }

  SUBCASE("backward on non-scalar is a usage error") {
    auto y = add(x, x);
    CHECK_THROWS_AS(backward(y), DimensionError);
  }
}

TEST_CASE("reshape and permute roundtrips are exact") {
  Rng rng(7);
  auto x = testutil::random_tensor<float>({2, 3, 4}, rng);

  auto r = reshape(reshape(x, {4, 6}), {2, 3, 4});
  CHECK(r.data() == x.data());

  auto p = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  CHECK(p.data() == x.data());
  CHECK(p.shape() == x.shape());
}

TEST_CASE("concat then slice recovers inputs exactly") {
  Rng rng(11);
  auto a = testutil::random_tensor<float>({2, 3}, rng);
  auto b = testutil::random_tensor<float>({2, 5}, rng);
  auto c = concat<float>({a, b}, 1);
  CHECK(c.shape() == Shape{2, 8});

  auto a2 = slice(c, {0, 0}, {2, 3});
  auto b2 = slice(c, {0, 3}, {2, 8});
  CHECK(a2.data() == a.data());
  CHECK(b2.data() == b.data());
}

TEST_CASE("pad then slice recovers input, padding is the fill value") {
  auto x = Tensor::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto p = pad_constant(x, {1, 0}, {0, 2}, -5.f);
  CHECK(p.shape() == Shape{3, 4});
  CHECK(p.at({0, 0}) == -5.f);
  CHECK(p.at({1, 0}) == 1.f);
  CHECK(p.at({2, 3}) == -5.f);
  auto back = slice(p, {1, 0}, {3, 2});
  CHECK(back.data() == x.data());
}

TEST_CASE("roll is toroidal and invertible") {
  auto x = Tensor::from_data({4}, {1.f, 2.f, 3.f, 4.f});

  SUBCASE("shift 2 wraps halves") {
    auto r = roll(x, {2});
    CHECK(r.data() == std::vector<float>{3.f, 4.f, 1.f, 2.f});
  }

  SUBCASE("shift then unshift is identity") {
    Rng rng(3);
    auto y = testutil::random_tensor<float>({3, 4, 5}, rng);
    auto r = roll(roll(y, {1, -2, 3}), {-1, 2, -3});
    CHECK(r.data() == y.data());
  }

  SUBCASE("energy preserved exactly") {
    Rng rng(5);
    auto y = testutil::random_tensor<float>({6, 7}, rng);
    auto r = roll(y, {2, 5});
    double e0 = 0, e1 = 0;
    for (float v : y.data()) e0 += double(v) * v;
    for (float v : r.data()) e1 += double(v) * v;
    CHECK(e0 == e1);
  }
}

TEST_CASE("broadcast add reduces gradients to operand shapes") {
  auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto b = Tensor::from_data({1, 3}, {10, 20, 30}, true);
  auto out = add(a, b);
  CHECK(out.at({1, 2}) == 36.f);
  backward(sum(out));
  CHECK(a.grad() == std::vector<float>(6, 1.f));
  CHECK(b.grad() == std::vector<float>(3, 2.f));
}

TEST_CASE("shape mismatch errors name both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
}

TEST_CASE("no-grad guard suppresses graph construction") {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  {
    NoGradGuard off;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  auto y = mul(x, x);
  CHECK(y.requires_grad());
}
