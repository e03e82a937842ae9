#include <doctest.h>

#include <cmath>

#include "ncadapt/gradcheck.hpp"
#include "ncadapt/ops.hpp"

using namespace ncadapt;

namespace {

TensorD vals(const Shape& s, std::vector<double> v) { return TensorD::from_values(s, std::move(v)); }

}  // namespace

TEST_CASE("conv_depthwise examples") {
  Tape<double> t;
  SUBCASE("hand convolution") {
    Var x = t.leaf(vals({1, 3}, {1, 2, 3}));
    Var k = t.leaf(vals({1, 3}, {1, 1, 1}));
    const auto& y = t.value(conv_depthwise(t, x, k));
    CHECK(y == vals({1, 3}, {3, 6, 5}));
  }
  SUBCASE("centre one-hot is the identity") {
    Rng r(3);
    auto xv = TensorD::uniform({2, 5, 4}, -1, 1, r);
    std::vector<double> kv(2 * 9, 0.0);
    kv[4] = kv[9 + 4] = 1.0;
    Var y = conv_depthwise(t, t.leaf(xv), t.leaf(vals({2, 9}, kv)));
    CHECK(t.value(y) == xv);
  }
  SUBCASE("zero input gives the bias") {
    Rng r(4);
    Var y = conv_depthwise(t, t.leaf(TensorD::zeros({2, 3, 3})), t.leaf(TensorD::uniform({2, 9}, -1, 1, r)),
                           t.leaf(vals({2}, {0.5, -2})));
    const auto& v = t.value(y);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(v[i] == 0.5);
      CHECK(v[9 + i] == -2);
    }
  }
  SUBCASE("errors") {
    Var x = t.leaf(TensorD::zeros({2, 4, 4}));
    CHECK_THROWS_AS(conv_depthwise(t, x, t.leaf(TensorD::zeros({2, 4}))), UsageError);
    CHECK_THROWS_AS(conv_depthwise(t, x, t.leaf(TensorD::zeros({3, 9}))), UsageError);
  }
}

TEST_CASE("conv_depthwise matches a direct 2-D reference") {
  Rng r(9);
  const std::size_t C = 2, H = 5, W = 6, k = 3;
  auto xv = TensorD::uniform({C, H, W}, -1, 1, r);
  auto kv = TensorD::uniform({C, k * k}, -1, 1, r);
  Tape<double> t;
  const auto& y = t.value(conv_depthwise(t, t.leaf(xv), t.leaf(kv)));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const long ii = long(i) + long(a) - 1, jj = long(j) + long(b) - 1;
            if (ii < 0 || jj < 0 || ii >= long(H) || jj >= long(W)) continue;
            acc += kv[c * 9 + a * 3 + b] * xv[(c * H + ii) * W + jj];
          }
        CHECK(y[(c * H + i) * W + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("pointwise_dense examples") {
  Tape<double> t;
  Var x = t.leaf(vals({2, 3}, {1, 2, 3, 10, 20, 30}));
  CHECK(t.value(pointwise_dense(t, x, t.leaf(vals({2, 2}, {1, 0, 0, 1})))) == t.value(x));
  CHECK(t.value(pointwise_dense(t, x, t.leaf(vals({1, 2}, {1, -1})))) == vals({1, 3}, {-9, -18, -27}));
  Var z = t.leaf(TensorD::zeros({2, 3}));
  CHECK(t.value(pointwise_dense(t, z, t.leaf(TensorD::zeros({1, 2})), t.leaf(vals({1}, {5})))) ==
        vals({1, 3}, {5, 5, 5}));
  CHECK_THROWS_AS(pointwise_dense(t, x, t.leaf(TensorD::zeros({1, 3}))), UsageError);
}

TEST_CASE("activation examples") {
  Tape<double> t;
  CHECK(t.value(activation(t, t.leaf(vals({3}, {-1, 0, 2})), Activation::Relu)) == vals({3}, {0, 0, 2}));
  CHECK(t.value(activation(t, t.leaf(vals({1}, {0})), Activation::Sigmoid))[0] == 0.5);
  CHECK(t.value(activation(t, t.leaf(vals({1}, {std::log(3.0)})), Activation::Sigmoid))[0] ==
        doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("resample examples") {
  Tape<double> t;
  CHECK(t.value(resample(t, t.leaf(vals({1, 2, 2}, {1, 1, 1, 1})), 2, ResampleDirection::Down)) ==
        vals({1, 1, 1}, {1}));
  CHECK(t.value(resample(t, t.leaf(vals({1, 2, 2}, {0, 2, 4, 6})), 2, ResampleDirection::Down)) ==
        vals({1, 1, 1}, {3}));
  CHECK(t.value(resample(t, t.leaf(vals({1, 1, 1}, {3})), 2, ResampleDirection::Up)) ==
        vals({1, 2, 2}, {3, 3, 3, 3}));
  CHECK_THROWS_AS(resample(t, t.leaf(vals({1, 1, 1}, {3})), 0, ResampleDirection::Up), UsageError);

  SUBCASE("replicate padding on ragged extents") {
    // [1,3] down by 2: the last column is padded with itself.
    Var y = resample(t, t.leaf(vals({1, 1, 3}, {1, 2, 5})), 2, ResampleDirection::Down);
    CHECK(t.shape(y) == Shape{1, 1, 2});
    CHECK(t.value(y)[0] == 1.5);
    CHECK(t.value(y)[1] == 5);
    const Shape crop{3, 5};
    Var u = resample(t, t.leaf(vals({1, 2, 3}, {1, 2, 3, 4, 5, 6})), 2, ResampleDirection::Up, &crop);
    CHECK(t.shape(u) == Shape{1, 3, 5});
  }

  SUBCASE("up then down is the identity on block-constant input") {
    Rng r(1);
    auto base = TensorD::uniform({2, 3, 2}, -1, 1, r);
    Var up = resample(t, t.leaf(base), 4, ResampleDirection::Up);
    const auto& back = t.value(resample(t, up, 4, ResampleDirection::Down));
    REQUIRE(back.shape() == base.shape());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(back[i] == doctest::Approx(base[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward examples") {
  Tape<double> t;
  Var x = t.leaf(vals({3}, {1, 2, 3}));
  Var unused = t.leaf(vals({2}, {4, 5}));
  auto g = t.backward(sum(t, x));
  CHECK(g[x] == vals({3}, {1, 1, 1}));
  CHECK(g[unused] == vals({2}, {0, 0}));

  Tape<double> t2;
  Var y = t2.leaf(vals({2}, {1, 2}));
  CHECK(t2.backward(sum(t2, mul(t2, y, y)))[y] == vals({2}, {2, 4}));

  CHECK_THROWS_AS(t2.backward(y), UsageError);
  CHECK_THROWS_AS(t2.backward(Var{999}), UsageError);
}

TEST_CASE("backward is linear") {
  Rng r(17);
  auto xv = TensorD::uniform({2, 4, 4}, -1, 1, r);
  auto kv = TensorD::uniform({2, 9}, -1, 1, r);
  auto grads = [&](double a, double b) {
    Tape<double> t;
    Var x = t.leaf(xv), k = t.leaf(kv);
    Var l1 = sum(t, activation(t, conv_depthwise(t, x, k), Activation::Sigmoid));
    Var l2 = sum(t, mul(t, x, x));
    auto g = t.backward(add(t, scale(t, l1, a), scale(t, l2, b)));
    return std::pair{g[x], g[k]};
  };
  const auto [x1, k1] = grads(1, 0);
  const auto [x2, k2] = grads(0, 1);
  const auto [xc, kc] = grads(2.5, -0.75);
  for (std::size_t i = 0; i < xc.size(); ++i) CHECK(xc[i] == doctest::Approx(2.5 * x1[i] - 0.75 * x2[i]).epsilon(1e-6));
  for (std::size_t i = 0; i < kc.size(); ++i) CHECK(kc[i] == doctest::Approx(2.5 * k1[i] - 0.75 * k2[i]).epsilon(1e-6));
}

TEST_CASE("non-finite values are rejected") {
  Tape<double> t;
  Var x = t.leaf(vals({1}, {1e308}));
  CHECK_THROWS_AS(scale(t, x, 10.0), NumericError);
}

TEST_CASE("finite_diff_check") {
  Rng r(5);
  auto xv = TensorD::uniform({1, 5}, -1, 1, r);
  auto kv = TensorD::uniform({1, 3}, -1, 1, r);
  auto res = finite_diff_check(
      [](Tape<double>& t, std::span<const Var> p) {
        return sum(t, activation(t, conv_depthwise(t, p[0], p[1]), Activation::Relu));
      },
      {xv, kv});
  CHECK(res.max_rel_error < 1e-4);
  CHECK(res.coordinates == 8);

  auto constant = finite_diff_check([](Tape<double>& t, std::span<const Var>) { return t.constant(vals({1}, {3})); },
                                    {xv});
  CHECK(constant.max_rel_error == 0.0);
}
