#include <doctest.h>

#include <cmath>

#include "ncadapt/gradcheck.hpp"
#include "ncadapt/loss.hpp"
#include "ncadapt/ops.hpp"
#include "ncadapt/optim.hpp"

using namespace ncadapt;

TEST_CASE("saturated correct logits give a near-zero loss") {
  Tape<double> t;
  Var z = t.leaf(TensorD::full({4, 4}, 20.0));
  CHECK(t.value(dice_focal_loss(t, z, TensorD::full({4, 4}, 1.0)))[0] < 1e-3);
}

TEST_CASE("closed form at zero logits") {
  const std::size_t n = 16, pos = 8;
  std::vector<double> tv(n, 0.0);
  for (std::size_t i = 0; i < pos; ++i) tv[i] = 1.0;
  Tape<double> t;
  Var z = t.leaf(TensorD::zeros({4, 4}));
  const double eps = 1e-5;
  const double dice = 1.0 - (2 * 0.5 * pos + eps) / (0.5 * n + pos + eps);
  const double focal = 0.25 * std::log(2.0);  // (1/2)^2 * ln 2 for every pixel
  CHECK(t.value(dice_focal_loss(t, z, TensorD::from_values({4, 4}, tv)))[0] ==
        doctest::Approx(dice + focal).epsilon(1e-12));
}

TEST_CASE("loss validation") {
  Tape<double> t;
  Var z = t.leaf(TensorD::zeros({2, 2}));
  CHECK_THROWS_AS(dice_focal_loss(t, z, TensorD::full({2, 2}, 0.5)), DataError);
  CHECK_THROWS_AS(dice_focal_loss(t, z, TensorD::zeros({4})), UsageError);
}

TEST_CASE("loss gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(seed);
    auto zv = TensorD::uniform({6, 5}, -3, 3, r);
    std::vector<double> tv(30);
    for (auto& v : tv) v = r.uniform() < 0.4 ? 1.0 : 0.0;
    const auto target = TensorD::from_values({6, 5}, tv);
    auto res = finite_diff_check(
        [&](Tape<double>& t, std::span<const Var> p) { return dice_focal_loss(t, p[0], target); }, {zv}, 1e-5);
    CHECK(res.max_rel_error < 1e-3);
  }
}

TEST_CASE("adam one step") {
  Param p{"w", Tensor::from_values({1}, {0.5f}), true, "backbone"};
  AdamMoments mo{Tensor::zeros({1}), Tensor::zeros({1})};
  AdamConfig cfg;
  adam_step(p, Tensor::from_values({1}, {1.0f}), mo, 1, cfg.lr, cfg);
  CHECK(p.value[0] == doctest::Approx(0.5 - cfg.lr / (1 + cfg.eps)).epsilon(1e-6));
  CHECK(mo.m[0] == doctest::Approx(0.1));
  CHECK(mo.v[0] == doctest::Approx(0.01));

  const float before = p.value[0];
  adam_step(p, Tensor::zeros({1}), mo, 2, cfg.lr, cfg);
  CHECK(mo.m[0] == doctest::Approx(0.09));
  CHECK(mo.v[0] == doctest::Approx(0.0099));
  CHECK(p.value[0] != before);  // momentum keeps moving it

  Param zero{"z", Tensor::from_values({2}, {1, 2}), true, "backbone"};
  AdamMoments zm{Tensor::zeros({2}), Tensor::zeros({2})};
  adam_step(zero, Tensor::zeros({2}), zm, 1, cfg.lr, cfg);
  CHECK(zero.value == Tensor::from_values({2}, {1, 2}));

  Param frozen{"f", Tensor::from_values({1}, {3.0f}), false, "backbone"};
  AdamMoments fm{Tensor::zeros({1}), Tensor::zeros({1})};
  adam_step(frozen, Tensor::from_values({1}, {5.0f}), fm, 1, cfg.lr, cfg);
  CHECK(frozen.value[0] == 3.0f);

  CHECK_THROWS_AS(adam_step(p, Tensor::from_values({1}, {NAN}), mo, 3, cfg.lr, cfg), NumericError);
  CHECK_THROWS_AS(adam_step(p, Tensor::zeros({1}), mo, 0, cfg.lr, cfg), UsageError);
}
