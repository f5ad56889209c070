#include <doctest.h>

#include <cmath>

#include "mtswin/gradcheck.hpp"
#include "mtswin/ops.hpp"
#include "test_util.hpp"

using namespace mtswin;
using DTensor = TensorT<double>;

namespace {

// Scalar triple-loop reference, independent of the gemm kernels.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(m * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul examples") {
  SUBCASE("identity") {
    auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(1);
    auto a = testutil::random_tensor<float>({3, 3}, rng);
    auto out = matmul(eye, a);
    CHECK(testutil::max_abs_diff(out, a) == 0.0);
  }

  SUBCASE("permutation matrix") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto p = Tensor::from_data({2, 2}, {0, 1, 1, 0});
    auto out = matmul(a, p);
    CHECK(out.data() == std::vector<float>{2, 1, 4, 3});
  }

  SUBCASE("random 4x5 x 5x3 against triple-loop oracle (64-bit)") {
    Rng rng(2);
    auto a = testutil::random_tensor<double>({4, 5}, rng);
    auto b = testutil::random_tensor<double>({5, 3}, rng);
    auto out = matmul(a, b);
    auto ref = matmul_oracle(a.data(), b.data(), 4, 5, 3);
    for (int i = 0; i < 12; ++i) CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }

  SUBCASE("batched with broadcast operand") {
    Rng rng(3);
    auto a = testutil::random_tensor<double>({2, 3, 4, 5}, rng);
    auto b = testutil::random_tensor<double>({5, 6}, rng);  // shared across batches
    auto out = matmul(a, b);
    CHECK(out.shape() == Shape{2, 3, 4, 6});
    for (int b0 = 0; b0 < 2; ++b0) {
      for (int b1 = 0; b1 < 3; ++b1) {
        std::vector<double> ablk(a.data().begin() + (b0 * 3 + b1) * 20,
                                 a.data().begin() + (b0 * 3 + b1) * 20 + 20);
        auto ref = matmul_oracle(ablk, b.data(), 4, 5, 6);
        for (int i = 0; i < 24; ++i) {
          CHECK(out.data()[(b0 * 3 + b1) * 24 + i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("softmax examples") {
  SUBCASE("uniform logits") {
    auto x = Tensor::from_data({3}, {0, 0, 0});
    auto y = softmax(x, 0);
    for (float v : y.data()) CHECK(v == doctest::Approx(1.f / 3.f));
  }

  SUBCASE("large logits do not overflow") {
    auto x = Tensor::from_data({2}, {1000.f, 0.f});
    auto y = softmax(x, 0);
    CHECK(y.data()[0] == doctest::Approx(1.f));
    CHECK(y.data()[1] == doctest::Approx(0.f));
    CHECK(std::isfinite(y.data()[0]));
  }

  SUBCASE("matches exp-normalize oracle in 64-bit") {
    auto x = DTensor::from_data({3}, {1, 2, 3});
    auto y = softmax(x, 0);
    double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) {
      CHECK(y.data()[i] == doctest::Approx(std::exp(i + 1.0) / denom).epsilon(1e-12));
    }
  }

  SUBCASE("slices sum to one and outputs positive") {
    Rng rng(5);
    auto x = testutil::random_tensor<float>({4, 6, 3}, rng, -5.f, 5.f);
    for (std::size_t axis : {0u, 1u, 2u}) {
      auto y = softmax(x, axis);
      // check a handful of slices by brute force summation
      std::int64_t outer = 1, inner = 1, len = x.shape()[axis];
      for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
      for (std::size_t i = axis + 1; i < 3; ++i) inner *= x.shape()[i];
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          double s = 0;
          for (std::int64_t t = 0; t < len; ++t) {
            float v = y.data()[o * len * inner + t * inner + in];
            CHECK(v > 0.f);
            s += v;
          }
          CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
      }
    }
  }

  SUBCASE("NaN input raises numeric error") {
    auto x = Tensor::from_data({2}, {std::nanf(""), 0.f});
    CHECK_THROWS_AS(softmax(x, 0), NumericError);
  }
}

TEST_CASE("layer_norm examples") {
  SUBCASE("constant vector maps to zeros under unit affine") {
    auto x = Tensor::full({4}, 3.f);
    auto g = Tensor::full({4}, 1.f);
    auto b = Tensor::zeros({4});
    auto y = layer_norm(x, g, b);
    for (float v : y.data()) CHECK(v == doctest::Approx(0.f));
  }

  SUBCASE("zero gamma passes beta through") {
    Rng rng(9);
    auto x = testutil::random_tensor<float>({2, 5}, rng);
    auto g = Tensor::zeros({5});
    auto b = Tensor::full({5}, 7.f);
    auto y = layer_norm(x, g, b);
    for (float v : y.data()) CHECK(v == 7.f);
  }

  SUBCASE("matches two-pass oracle in 64-bit") {
    Rng rng(10);
    auto x = testutil::random_tensor<double>({6}, rng, -3.0, 3.0);
    auto g = testutil::random_tensor<double>({6}, rng);
    auto b = testutil::random_tensor<double>({6}, rng);
    const double eps = 1e-5;
    auto y = layer_norm(x, g, b, eps);

    double mu = 0;
    for (double v : x.data()) mu += v;
    mu /= 6;
    double var = 0;
    for (double v : x.data()) var += (v - mu) * (v - mu);
    var /= 6;
    for (int i = 0; i < 6; ++i) {
      double ref = (x.data()[i] - mu) / std::sqrt(var + eps) * g.data()[i] + b.data()[i];
      CHECK(y.data()[i] == doctest::Approx(ref).epsilon(1e-10));
    }
  }

  SUBCASE("pre-affine mean/variance contract") {
    Rng rng(11);
    auto x = testutil::random_tensor<float>({8, 16}, rng, -4.f, 4.f);
    auto g = Tensor::full({16}, 1.f);
    auto b = Tensor::zeros({16});
    auto y = layer_norm(x, g, b);
    for (int r = 0; r < 8; ++r) {
      double mu = 0, var = 0;
      for (int c = 0; c < 16; ++c) mu += y.data()[r * 16 + c];
      mu /= 16;
      for (int c = 0; c < 16; ++c) {
        double d = y.data()[r * 16 + c] - mu;
        var += d * d;
      }
      var /= 16;
      CHECK(std::fabs(mu) < 1e-5);
      CHECK(std::fabs(var - 1.0) < 1e-3);
    }
  }

  SUBCASE("zero-length normalized axis is an error") {
    auto x = Tensor::zeros({2, 0});
    auto g = Tensor::zeros({0});
    auto b = Tensor::zeros({0});
    CHECK_THROWS_AS(layer_norm(x, g, b), DimensionError);
  }
}

TEST_CASE("gelu examples") {
  SUBCASE("zero maps to zero") {
    auto y = gelu(Tensor::scalar(0.f));
    CHECK(y.item() == 0.f);
  }

  SUBCASE("asymptotes") {
    CHECK(gelu(Tensor::scalar(20.f)).item() == doctest::Approx(20.f));
    CHECK(gelu(Tensor::scalar(-20.f)).item() == doctest::Approx(0.f));
  }

  SUBCASE("x=1 matches the Gaussian-CDF formula") {
    auto y = gelu(DTensor::scalar(1.0));
    const double ref = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(y.item() == doctest::Approx(ref).epsilon(1e-6));
  }
}

TEST_CASE("conv3d examples") {
  SUBCASE("1x1x1 unit kernel is the identity") {
    Rng rng(20);
    auto x = testutil::random_tensor<float>({1, 3, 4, 5}, rng);
    auto w = Tensor::full({1, 1, 1, 1, 1}, 1.f);
    auto y = conv3d(x, w, Tensor(), 1, 0);
    CHECK(y.shape() == x.shape());
    CHECK(testutil::max_abs_diff(y, x) == 0.0);
  }

  SUBCASE("all-ones 2x2x2 kernel counts voxels") {
    auto x = Tensor::full({1, 4, 4, 4}, 1.f);
    auto w = Tensor::full({1, 1, 2, 2, 2}, 1.f);
    auto y = conv3d(x, w, Tensor(), 2, 0);
    CHECK(y.shape() == Shape{1, 2, 2, 2});
    for (float v : y.data()) CHECK(v == 8.f);
  }

  SUBCASE("random case matches 7-deep-loop oracle in 64-bit") {
    Rng rng(21);
    const int ci = 2, co = 3, k = 3, s = 2, p = 1;
    const int i0 = 5, i1 = 6, i2 = 4;
    auto x = testutil::random_tensor<double>({ci, i0, i1, i2}, rng);
    auto w = testutil::random_tensor<double>({co, ci, k, k, k}, rng);
    auto bias = testutil::random_tensor<double>({co}, rng);
    auto y = conv3d(x, w, bias, s, p);

    const int o0 = (i0 + 2 * p - k) / s + 1;
    const int o1 = (i1 + 2 * p - k) / s + 1;
    const int o2 = (i2 + 2 * p - k) / s + 1;
    CHECK(y.shape() == Shape{co, o0, o1, o2});
    for (int oc = 0; oc < co; ++oc)
      for (int od = 0; od < o0; ++od)
        for (int oh = 0; oh < o1; ++oh)
          for (int ow = 0; ow < o2; ++ow) {
            double acc = bias.data()[oc];
            for (int ic = 0; ic < ci; ++ic)
              for (int kd = 0; kd < k; ++kd)
                for (int kh = 0; kh < k; ++kh)
                  for (int kw = 0; kw < k; ++kw) {
                    const int id = od * s - p + kd;
                    const int ih = oh * s - p + kh;
                    const int iw = ow * s - p + kw;
                    if (id < 0 || id >= i0 || ih < 0 || ih >= i1 || iw < 0 || iw >= i2) continue;
                    acc += x.data()[((ic * i0 + id) * i1 + ih) * i2 + iw] *
                           w.data()[(((oc * ci + ic) * k + kd) * k + kh) * k + kw];
                  }
            CHECK(y.at({oc, od, oh, ow}) == doctest::Approx(acc).epsilon(1e-10));
          }
  }

  SUBCASE("non-positive output dim is an error") {
    auto x = Tensor::zeros({1, 2, 2, 2});
    auto w = Tensor::zeros({1, 1, 3, 3, 3});
    CHECK_THROWS_AS(conv3d(x, w, Tensor(), 1, 0), DimensionError);
  }
}

TEST_CASE("conv_transpose3d examples") {
  SUBCASE("single voxel spreads into a kernel block") {
    auto x = Tensor::from_data({1, 1, 1, 1}, {1.f});
    auto w = Tensor::full({1, 1, 2, 2, 2}, 1.f);
    auto y = conv_transpose3d(x, w, 2);
    CHECK(y.shape() == Shape{1, 2, 2, 2});
    for (float v : y.data()) CHECK(v == 1.f);
  }

  SUBCASE("adjoint identity <conv(x), y> == <x, convT(y)>") {
    Rng rng(22);
    const int k = 2, s = 2;
    auto x = testutil::random_tensor<double>({2, 4, 4, 4}, rng);
    auto w = testutil::random_tensor<double>({3, 2, k, k, k}, rng);  // conv weight [co, ci, k..]
    auto cx = conv3d(x, w, DTensor(), s, 0);

    auto y = testutil::random_tensor<double>({3, 2, 2, 2}, rng);
    // The adjoint swaps channel roles, so the conv weight [co, ci, k..] is
    // already in the transpose layout [c_in, c_out, k..].
    auto cty = conv_transpose3d(y, w, s);
    CHECK(cty.shape() == x.shape());

    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
    for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * cty.data()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }

  SUBCASE("zero input gives zero output") {
    auto x = Tensor::zeros({2, 3, 3, 3});
    Rng rng(23);
    auto w = testutil::random_tensor<float>({2, 4, 2, 2, 2}, rng);
    auto y = conv_transpose3d(x, w, 2);
    for (float v : y.data()) CHECK(v == 0.f);
  }
}

TEST_CASE("global_avg_pool examples") {
  SUBCASE("constant channels pool to their value") {
    auto x = Tensor::zeros({2, 2, 2, 2});
    for (int i = 0; i < 8; ++i) x.mutable_data()[i] = 3.f;
    for (int i = 8; i < 16; ++i) x.mutable_data()[i] = -1.f;
    auto y = global_avg_pool(x);
    CHECK(y.data() == std::vector<float>{3.f, -1.f});
  }

  SUBCASE("matches direct sum oracle") {
    auto x = Tensor::from_data({1, 2, 2, 1}, {0, 2, 4, 6});
    auto y = global_avg_pool(x);
    CHECK(y.data()[0] == doctest::Approx(3.f));
  }

  SUBCASE("single voxel volume is the identity on channels") {
    auto x = Tensor::from_data({3, 1, 1, 1}, {5, 6, 7});
    auto y = global_avg_pool(x);
    CHECK(y.data() == std::vector<float>{5, 6, 7});
  }
}

TEST_CASE("dropout examples") {
  Rng rng(30);

  SUBCASE("p=0 is the identity") {
    auto x = Tensor::from_data({4}, {1, 2, 3, 4}, true);
    auto y = dropout(x, 0.0, rng, true);
    CHECK(y.data() == x.data());
  }

  SUBCASE("evaluation mode is the identity") {
    auto x = Tensor::from_data({4}, {1, 2, 3, 4});
    auto y = dropout(x, 0.9, rng, false);
    CHECK(y.data() == x.data());
  }

  SUBCASE("p=0.5 statistics over 1e5 elements") {
    const std::int64_t n = 100000;
    auto x = Tensor::full({n}, 1.f);
    auto y = dropout(x, 0.5, rng, true);
    std::int64_t survivors = 0;
    double mean = 0;
    for (float v : y.data()) {
      if (v != 0.f) ++survivors;
      mean += v;
    }
    mean /= double(n);
    CHECK(std::fabs(double(survivors) / double(n) - 0.5) < 0.01);
    CHECK(std::fabs(mean - 1.0) < 0.02);
  }

  SUBCASE("p >= 1 is a parameter error") {
    auto x = Tensor::zeros({2});
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ConfigError);
  }
}

TEST_CASE("cross_entropy examples") {
  SUBCASE("confident correct logits give near-zero loss") {
    auto logits = Tensor::from_data({1, 3}, {30.f, 0.f, 0.f});
    auto loss = cross_entropy(logits, {0});
    CHECK(loss.item() < 1e-6f);
  }

  SUBCASE("uniform logits over 4 classes give ln 4") {
    auto logits = Tensor::zeros({1, 4});
    auto loss = cross_entropy(logits, {2});
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  }

  SUBCASE("random 3-class batch matches log-sum-exp oracle in 64-bit") {
    Rng rng(31);
    auto logits = testutil::random_tensor<double>({5, 3}, rng, -2.0, 2.0);
    std::vector<std::int64_t> targets = {0, 2, 1, 1, 0};
    auto loss = cross_entropy(logits, targets);
    double ref = 0;
    for (int r = 0; r < 5; ++r) {
      double lse = 0;
      for (int j = 0; j < 3; ++j) lse += std::exp(logits.data()[r * 3 + j]);
      ref += std::log(lse) - logits.data()[r * 3 + targets[r]];
    }
    ref /= 5;
    CHECK(loss.item() == doctest::Approx(ref).epsilon(1e-10));
  }

  SUBCASE("out-of-range class is a data error") {
    auto logits = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(cross_entropy(logits, {3}), DataError);
  }
}

TEST_CASE("finite-difference gradient checks for every differentiable primitive") {
  Rng rng(99);
  const double kTol = 1e-4;

  auto check = [&](const char* name, auto fn, std::vector<DTensor> inputs) {
    for (auto& t : inputs) t.set_requires_grad(true);
    auto result = gradcheck(fn, inputs);
    INFO(std::string(name) << " worst " << result.worst);
    CHECK(result.max_rel_error < kTol);
  };

  check("add", [](const std::vector<DTensor>& in) { return sum(add(in[0], in[1])); },
        {testutil::random_tensor<double>({3, 4}, rng),
         testutil::random_tensor<double>({3, 4}, rng)});
  check("add broadcast",
        [](const std::vector<DTensor>& in) { return sum(mul(add(in[0], in[1]), in[0])); },
        {testutil::random_tensor<double>({3, 4}, rng), testutil::random_tensor<double>({4}, rng)});
  check("sub", [](const std::vector<DTensor>& in) { return sum(mul(sub(in[0], in[1]), in[0])); },
        {testutil::random_tensor<double>({2, 3}, rng),
         testutil::random_tensor<double>({2, 3}, rng)});
  check("mul", [](const std::vector<DTensor>& in) { return sum(mul(in[0], in[1])); },
        {testutil::random_tensor<double>({3, 3}, rng),
         testutil::random_tensor<double>({3, 3}, rng)});
  check("scale", [](const std::vector<DTensor>& in) { return sum(scale(in[0], 2.5)); },
        {testutil::random_tensor<double>({5}, rng)});
  check("reshape/permute",
        [](const std::vector<DTensor>& in) {
          return sum(mul(permute(reshape(in[0], {4, 3}), {1, 0}), in[1]));
        },
        {testutil::random_tensor<double>({2, 6}, rng),
         testutil::random_tensor<double>({3, 4}, rng)});
  check("concat/slice",
        [](const std::vector<DTensor>& in) {
          auto c = concat<double>({in[0], in[1]}, 0);
          return sum(mul(slice(c, {1, 0}, {4, 2}), slice(c, {0, 0}, {3, 2})));
        },
        {testutil::random_tensor<double>({2, 2}, rng),
         testutil::random_tensor<double>({2, 2}, rng)});
  check("pad/roll",
        [](const std::vector<DTensor>& in) {
          return sum(mul(roll(pad_constant(in[0], {1, 0}, {0, 1}, 0.5), {1, -1}),
                         roll(pad_constant(in[0], {0, 1}, {1, 0}, -0.5), {-1, 1})));
        },
        {testutil::random_tensor<double>({3, 3}, rng)});
  check("matmul",
        [](const std::vector<DTensor>& in) { return sum(matmul(in[0], in[1])); },
        {testutil::random_tensor<double>({2, 3, 4}, rng),
         testutil::random_tensor<double>({4, 5}, rng)});
  check("linear",
        [](const std::vector<DTensor>& in) { return mean(linear(in[0], in[1], in[2])); },
        {testutil::random_tensor<double>({3, 4}, rng),
         testutil::random_tensor<double>({4, 2}, rng),
         testutil::random_tensor<double>({2}, rng)});
  check("softmax",
        [](const std::vector<DTensor>& in) { return sum(mul(softmax(in[0], 1), in[1])); },
        {testutil::random_tensor<double>({3, 5}, rng),
         testutil::random_tensor<double>({3, 5}, rng)});
  check("layer_norm",
        [](const std::vector<DTensor>& in) {
          return sum(mul(layer_norm(in[0], in[1], in[2], 1e-5), in[0]));
        },
        {testutil::random_tensor<double>({4, 6}, rng),
         testutil::random_tensor<double>({6}, rng, 0.5, 1.5),
         testutil::random_tensor<double>({6}, rng)});
  check("instance_norm",
        [](const std::vector<DTensor>& in) {
          return sum(mul(instance_norm(in[0], in[1], in[2], 1e-5), in[0]));
        },
        {testutil::random_tensor<double>({2, 3, 2, 2}, rng),
         testutil::random_tensor<double>({2}, rng, 0.5, 1.5),
         testutil::random_tensor<double>({2}, rng)});
  check("gelu", [](const std::vector<DTensor>& in) { return sum(gelu(in[0])); },
        {testutil::random_tensor<double>({4, 4}, rng, -2.0, 2.0)});
  check("leaky_relu",
        [](const std::vector<DTensor>& in) { return sum(leaky_relu(in[0], 0.01)); },
        {testutil::random_tensor<double>({10}, rng, 0.05, 2.0)});  // keep away from the kink
  check("conv3d",
        [](const std::vector<DTensor>& in) {
          return sum(conv3d(in[0], in[1], in[2], 2, 1));
        },
        {testutil::random_tensor<double>({2, 4, 4, 4}, rng),
         testutil::random_tensor<double>({2, 2, 3, 3, 3}, rng),
         testutil::random_tensor<double>({2}, rng)});
  check("conv_transpose3d",
        [](const std::vector<DTensor>& in) {
          auto y = conv_transpose3d(in[0], in[1], 2);
          return sum(mul(y, y));
        },
        {testutil::random_tensor<double>({2, 2, 2, 2}, rng),
         testutil::random_tensor<double>({2, 3, 2, 2, 2}, rng)});
  check("global_avg_pool",
        [](const std::vector<DTensor>& in) {
          auto y = global_avg_pool(in[0]);
          return sum(mul(y, y));
        },
        {testutil::random_tensor<double>({3, 2, 2, 2}, rng)});
  check("cross_entropy",
        [](const std::vector<DTensor>& in) { return cross_entropy(in[0], {1, 0, 2}); },
        {testutil::random_tensor<double>({3, 3}, rng)});
  check("sum/mean",
        [](const std::vector<DTensor>& in) { return add(sum(mul(in[0], in[0])), mean(in[0])); },
        {testutil::random_tensor<double>({7}, rng)});
}

TEST_CASE("composite chain gradient matches finite differences") {
  Rng rng(123);
  auto x = testutil::random_tensor<double>({4, 6}, rng, -1.0, 1.0, true);
  auto w = testutil::random_tensor<double>({6, 3}, rng, -0.5, 0.5, true);
  auto b = testutil::random_tensor<double>({3}, rng, -0.1, 0.1, true);

  auto loss_fn = [](const std::vector<DTensor>& in) {
    auto h = gelu(linear(in[0], in[1], in[2]));
    return cross_entropy(h, {0, 1, 2, 1});
  };
  auto result = gradcheck(loss_fn, {x, w, b});
  CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("deterministic evaluation: same seed, same bits") {
  auto run = [] {
    Rng rng(77);
    auto x = testutil::random_tensor<float>({3, 8}, rng, -1.f, 1.f, true);
    auto w = testutil::random_tensor<float>({8, 8}, rng, -1.f, 1.f, true);
    auto y = softmax(linear(x, w, Tensor()), 1);
    backward(mean(y));
    return std::make_pair(y.data(), x.grad());
  };
  auto [y1, g1] = run();
  auto [y2, g2] = run();
  CHECK(y1 == y2);
  CHECK(g1 == g2);
}
