#include <doctest.h>

#include "sagate/nn.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace sagate;
using sagate::testing::gradcheck;
using sagate::testing::max_abs_diff;

namespace {

template <typename S>
ConvParams<S> conv_of(Shape wshape, std::vector<S> w, std::vector<S> b, int stride, int pad) {
  ConvParams<S> p;
  p.weight = Tensor<S>::from_data(std::move(wshape), std::move(w));
  if (!b.empty()) p.bias = Tensor<S>::from_data({p.weight.dim(0)}, std::move(b));
  p.stride = stride;
  p.padding = pad;
  return p;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity-permutation kernel leaves the input unchanged") {
  SplitMix64 rng(3);
  auto x = Tensor<double>::uniform({1, 2, 3, 3}, rng, -1, 1);
  // 1x1 kernel that swaps the two channels, applied twice = identity.
  auto p = conv_of<double>({2, 2, 1, 1}, {0, 1, 1, 0}, {}, 1, 0);
  auto once = conv2d(x, p);
  CHECK(once.at({0, 0, 1, 1}) == x.at({0, 1, 1, 1}));
  CHECK(max_abs_diff(conv2d(once, p), x) == 0.0);
}

TEST_CASE("conv2d: 3x3 all-ones kernel on a 3x3 ones image, pad 1") {
  auto x = Tensor<double>::ones({1, 1, 3, 3});
  auto p = conv_of<double>({1, 1, 3, 3}, std::vector<double>(9, 1.0), {0.0}, 1, 1);
  auto y = conv2d(x, p);
  CHECK(y.at({0, 0, 1, 1}) == 9.0);  // center
  CHECK(y.at({0, 0, 0, 1}) == 6.0);  // edge
  CHECK(y.at({0, 0, 0, 0}) == 4.0);  // corner
}

TEST_CASE("conv2d matches the straight-line oracle on random settings") {
  SplitMix64 rng(17);
  for (int stride : {1, 2})
    for (int pad : {0, 1})
      for (int64_t k : {1, 3}) {
        if (k == 1 && pad == 1) continue;
        auto x = Tensor<double>::uniform({2, 3, 5, 6}, rng, -1, 1);
        auto w = Tensor<double>::uniform({4, 3, k, k}, rng, -1, 1);
        auto b = Tensor<double>::uniform({4}, rng, -1, 1);
        ConvParams<double> p;
        p.weight = w;
        p.bias = b;
        p.stride = stride;
        p.padding = pad;
        auto y = conv2d(x, p);
        int64_t Ho, Wo;
        auto ref = oracle::conv2d(x.value(), 2, 3, 5, 6, w.value(), b.value(), 4, k, stride, pad,
                                  Ho, Wo);
        CHECK(y.shape() == Shape{2, 4, Ho, Wo});
        double worst = 0;
        for (size_t i = 0; i < ref.size(); ++i)
          worst = std::max(worst, std::abs(ref[i] - y.value()[i]));
        CHECK(worst < 1e-12);
      }
}

TEST_CASE("conv2d: gradient check (input, weight, bias)") {
  SplitMix64 rng(23);
  auto x = Tensor<double>::uniform({1, 2, 4, 4}, rng, -1, 1);
  auto w = Tensor<double>::uniform({3, 2, 3, 3}, rng, -0.7, 0.7);
  auto b = Tensor<double>::uniform({3}, rng, -0.5, 0.5);
  auto loss = [&] {
    ConvParams<double> p;
    p.weight = w;
    p.bias = b;
    p.stride = 1;
    p.padding = 1;
    auto y = conv2d(x, p);
    return sum_all(mul(y, y));
  };
  CHECK(gradcheck<double>({x, w, b}, loss) < 1e-5);
}

TEST_CASE("conv2d: error paths") {
  auto x = Tensor<double>::ones({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, conv_of<double>({3, 3, 1, 1}, std::vector<double>(9, 0.0), {}, 1, 0)),
                  ShapeMismatch);  // channel mismatch
  CHECK_THROWS_AS(
      conv2d(Tensor<double>::ones({1, 1, 1, 1}),
             conv_of<double>({1, 1, 3, 3}, std::vector<double>(9, 0.0), {}, 1, 0)),
      DegenerateOutput);
  ConvParams<double> bad;
  bad.weight = Tensor<double>::ones({1, 2, 2, 2});
  CHECK_THROWS_AS(conv2d(x, bad), ShapeMismatch);  // kernel must be 1 or 3
}

TEST_CASE("global_avg_pool: constants, hand mean, gradient") {
  auto c = Tensor<double>::full({2, 3, 4, 5}, 2.5);
  auto y = global_avg_pool(c);
  CHECK(y.shape() == Shape{2, 3});
  for (double v : y.value()) CHECK(v == doctest::Approx(2.5));

  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_avg_pool(x).value()[0] == doctest::Approx(2.5));

  SplitMix64 rng(31);
  auto r = Tensor<double>::uniform({2, 3, 3, 3}, rng, -1, 1);
  CHECK(gradcheck<double>({r}, [&] {
          auto p = global_avg_pool(r);
          return sum_all(mul(p, p));
        }) < 1e-6);
}

TEST_CASE("softmax_pair: symmetry, stability, exact-sum property") {
  auto g = Tensor<double>::from_data({1, 1, 2, 2}, {0.3, -2.0, 5.0, 0.0});
  auto [a1, a2] = softmax_pair(g, g.detached());
  for (double v : a1.value()) CHECK(v == doctest::Approx(0.5));

  auto big = Tensor<double>::from_data({1, 1, 1, 1}, {1000.0});
  auto zero = Tensor<double>::zeros({1, 1, 1, 1});
  auto [b1, b2] = softmax_pair(big, zero);
  CHECK(b1.value()[0] == doctest::Approx(1.0));
  CHECK(b2.value()[0] == doctest::Approx(0.0));
  // Reference at f64: sigmoid(1000) == 1 to machine precision.
  CHECK(std::isfinite(b2.value()[0]));

  SplitMix64 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const double amp = trial % 3 == 2 ? 1e4 : 8.0;
    auto x = Tensor<float>::uniform({1, 1, 4, 4}, rng, static_cast<float>(-amp),
                                    static_cast<float>(amp));
    auto y = Tensor<float>::uniform({1, 1, 4, 4}, rng, static_cast<float>(-amp),
                                    static_cast<float>(amp));
    auto [p, q] = softmax_pair(x, y);
    for (size_t i = 0; i < p.value().size(); ++i) {
      CHECK(std::abs(static_cast<double>(p.value()[i]) + q.value()[i] - 1.0) <= 1e-6);
      CHECK(p.value()[i] >= 0.f);
      CHECK(p.value()[i] <= 1.f);
    }
  }

  auto ga = Tensor<double>::from_data({1, 1, 2, 2}, {0.4, -1.2, 2.0, 0.7});
  auto gb = Tensor<double>::from_data({1, 1, 2, 2}, {-0.5, 0.8, 1.0, -0.3});
  CHECK(gradcheck<double>({ga, gb}, [&] {
          auto [p, q] = softmax_pair(ga, gb);
          return sum_all(add(mul(p, p), scale(q, 0.7)));
        }) < 1e-6);

  CHECK_THROWS_AS(softmax_pair(ga, Tensor<double>::zeros({1, 1, 2, 3})), ShapeMismatch);
}

TEST_CASE("channel_norm: statistics before affine, oracle, gradient") {
  SplitMix64 rng(55);
  auto x = Tensor<double>::normal({2, 3, 5, 7}, rng, 1.5, 2.0);
  auto gamma = Tensor<double>::ones({3});
  auto beta = Tensor<double>::zeros({3});
  auto y = channel_norm(x, gamma, beta);

  const int64_t hw = 35;
  for (int64_t i = 0; i < 6; ++i) {
    double mu = 0;
    for (int64_t j = 0; j < hw; ++j) mu += y.value()[static_cast<size_t>(i * hw + j)];
    mu /= hw;
    double var = 0;
    for (int64_t j = 0; j < hw; ++j) {
      const double d = y.value()[static_cast<size_t>(i * hw + j)] - mu;
      var += d * d;
    }
    var /= hw;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);
  }

  auto g2 = Tensor<double>::from_data({3}, {0.5, 2.0, -1.0});
  auto b2 = Tensor<double>::from_data({3}, {0.1, -0.2, 0.3});
  auto ref = oracle::channel_norm(x.value(), 2, 3, hw, g2.value(), b2.value());
  auto y2 = channel_norm(x, g2, b2);
  double worst = 0;
  for (size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y2.value()[i]));
  CHECK(worst < 1e-12);

  auto xs = Tensor<double>::normal({1, 2, 3, 3}, rng, 0.0, 1.0);
  auto gs = Tensor<double>::from_data({2}, {1.2, 0.8});
  auto bs = Tensor<double>::from_data({2}, {-0.1, 0.4});
  CHECK(gradcheck<double>({xs, gs, bs}, [&] {
          auto n = channel_norm(xs, gs, bs);
          return sum_all(mul(n, n));
        }) < 1e-5);
}

TEST_CASE("bilinear_upsample: identity, constants, known 2x case, gradient") {
  SplitMix64 rng(61);
  auto x = Tensor<double>::uniform({1, 2, 3, 5}, rng, -1, 1);
  CHECK(max_abs_diff(bilinear_upsample(x, 3, 5), x) == 0.0);  // same size = identity

  auto c = Tensor<double>::full({1, 1, 2, 2}, 3.25);
  auto up = bilinear_upsample(c, 5, 7);
  for (double v : up.value()) CHECK(v == doctest::Approx(3.25));

  // 1x2 -> 1x4 with align-corners=false: sources at 0.75-pixel spacing.
  auto row = Tensor<double>::from_data({1, 1, 1, 2}, {0.0, 1.0});
  auto r4 = bilinear_upsample(row, 1, 4);
  CHECK(r4.value()[0] == doctest::Approx(0.0));
  CHECK(r4.value()[1] == doctest::Approx(0.25));
  CHECK(r4.value()[2] == doctest::Approx(0.75));
  CHECK(r4.value()[3] == doctest::Approx(1.0));

  auto g = Tensor<double>::uniform({1, 2, 3, 3}, rng, -1, 1);
  CHECK(gradcheck<double>({g}, [&] {
          auto u = bilinear_upsample(g, 7, 5);
          return sum_all(mul(u, u));
        }) < 1e-6);
  // Upsampling from a single pixel broadcasts the value.
  auto one = Tensor<double>::from_data({1, 1, 1, 1}, {2.0});
  auto u1 = bilinear_upsample(one, 4, 4);
  for (double v : u1.value()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("mlp: hidden width rule and gradient") {
  CHECK(MlpParams<double>::hidden_width(8, 2.0) == 4);
  CHECK(MlpParams<double>::hidden_width(3, 2.0) == 2);  // round(1.5) = 2
  CHECK(MlpParams<double>::hidden_width(1, 4.0) == 1);  // floor of 1

  SplitMix64 rng(71);
  MlpParams<double> p;
  p.w1 = Tensor<double>::uniform({3, 4}, rng, -1, 1);
  p.b1 = Tensor<double>::uniform({3}, rng, -0.5, 0.5);
  p.w2 = Tensor<double>::uniform({2, 3}, rng, -1, 1);
  p.b2 = Tensor<double>::uniform({2}, rng, -0.5, 0.5);
  auto x = Tensor<double>::uniform({5, 4}, rng, -1, 1);

  auto ref = oracle::mlp(x.value(), 5, 4, p.w1.value(), p.b1.value(), 3, p.w2.value(),
                         p.b2.value(), 2);
  auto y = mlp_forward(x, p);
  double worst = 0;
  for (size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.value()[i]));
  CHECK(worst < 1e-12);

  CHECK(gradcheck<double>({x, p.w1, p.b1, p.w2, p.b2}, [&] {
          auto out = mlp_forward(x, p);
          return sum_all(mul(out, out));
        }) < 1e-5);
}
