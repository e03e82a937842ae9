#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "ncadapt/gradcheck.hpp"
#include "ncadapt/nca.hpp"

using namespace ncadapt;

namespace {

// Random parameters for every level of `arch` placed on the tape.
template <class T>
std::vector<LevelVars> random_levels(Tape<T>& t, const ArchConfig& arch, Rng& r, bool adapter, double mlp2_scale = 0.1) {
  std::vector<LevelVars> out;
  const std::size_t C = arch.channels, H = arch.hidden, A = arch.adapter_width;
  for (std::size_t l = 0; l < arch.levels; ++l) {
    LevelVars lv;
    lv.kernel = t.leaf(BasicTensor<T>::uniform({C, arch.kernel_taps(l)}, -0.3, 0.3, r));
    lv.bias = t.leaf(BasicTensor<T>::uniform({C}, -0.1, 0.1, r));
    lv.mlp1 = t.leaf(BasicTensor<T>::uniform({H, 2 * C}, -0.3, 0.3, r));
    lv.mlp2 = t.leaf(mlp2_scale > 0 ? BasicTensor<T>::uniform({C, H}, -mlp2_scale, mlp2_scale, r)
                                     : BasicTensor<T>::zeros({C, H}));
    if (adapter)
      lv.adapter = AdapterVars{t.leaf(BasicTensor<T>::uniform({A, C}, -0.3, 0.3, r)),
                               t.leaf(BasicTensor<T>::uniform({C, A}, -0.3, 0.3, r))};
    out.push_back(lv);
  }
  return out;
}

ArchConfig small_arch(std::size_t rank = 2) {
  ArchConfig a;
  a.channels = 4;
  a.hidden = 6;
  a.adapter_width = 2;
  a.steps = {2, 2};
  a.spatial_rank = rank;
  return a;
}

}  // namespace

TEST_CASE("parameter arithmetic") {
  const auto a3 = ArchConfig::default3d();
  CHECK(level_param_count(a3, 0) == 8768);
  CHECK(level_param_count(a3, 1) == 3712);
  CHECK(backbone_param_count(a3) == 12480);
  CHECK(perception_param_count(a3, 0) + perception_param_count(a3, 1) == 5952);
  CHECK(adapter_param_count(a3) == 384);
  // Independent evaluation of C(k^d+1) + 2CH + HC per level for the 2-D default.
  const auto a2 = ArchConfig::default2d();
  const std::size_t C = 16, H = 68;
  CHECK(backbone_param_count(a2) == (C * (49 + 1) + 3 * C * H) + (C * (9 + 1) + 3 * C * H));
  CHECK(backbone_param_count(a2) == 7488);
}

TEST_CASE("seed_state") {
  Tape<float> t;
  auto img = Tensor::full({2, 2}, 1.0f);
  Var s = seed_state(t, img, 4, 2);
  CHECK(t.shape(s) == Shape{4, 2, 2});
  float total = 0;
  for (float v : t.value(s).data()) total += v;
  CHECK(total == 4.0f);
  for (std::size_t i = 4; i < 16; ++i) CHECK(t.value(s)[i] == 0.0f);
  CHECK(t.value(seed_state(t, img, 4, 2)) == t.value(s));
  CHECK_THROWS_AS(seed_state(t, img, 4, 3), UsageError);
}

TEST_CASE("perceive concatenates state and convolution") {
  Tape<double> t;
  LevelVars lv;
  lv.kernel = t.leaf(TensorD::from_values({1, 3}, {1, 1, 1}));
  lv.bias = t.leaf(TensorD::from_values({1}, {0}));
  Var p = perceive(t, t.leaf(TensorD::from_values({1, 3}, {1, 2, 3})), lv);
  CHECK(t.value(p) == TensorD::from_values({2, 3}, {1, 2, 3, 3, 6, 5}));
}

TEST_CASE("nca_step hand computation on a single cell") {
  // C = 2, H = 1, 1-D grid of one cell, kernel size 1.
  const double a = 0.7, b = -0.4, k0 = 2, k1 = -1, c0 = 0.1, c1 = 0.3;
  const std::vector<double> w{0.5, -0.25, 1.0, 0.75};
  const std::vector<double> u{2.0, -3.0};
  Tape<double> t;
  LevelVars lv;
  lv.kernel = t.leaf(TensorD::from_values({2, 1}, {k0, k1}));
  lv.bias = t.leaf(TensorD::from_values({2}, {c0, c1}));
  lv.mlp1 = t.leaf(TensorD::from_values({1, 4}, w));
  lv.mlp2 = t.leaf(TensorD::from_values({2, 1}, u));
  Var s = t.leaf(TensorD::from_values({2, 1}, {a, b}));
  const double p[4] = {a, b, k0 * a + c0, k1 * b + c1};
  double h = 0;
  for (int i = 0; i < 4; ++i) h += w[i] * p[i];
  h = std::max(h, 0.0);
  Var fired = nca_step(t, s, lv, TensorD::from_values({1}, {1}));
  CHECK(t.value(fired)[0] == doctest::Approx(a + u[0] * h).epsilon(1e-14));
  CHECK(t.value(fired)[1] == doctest::Approx(b + u[1] * h).epsilon(1e-14));
  Var idle = nca_step(t, s, lv, TensorD::from_values({1}, {0}));
  CHECK(t.value(idle) == t.value(s));
}

TEST_CASE("zero mlp2 leaves the state unchanged") {
  Rng r(3);
  auto arch = small_arch();
  Tape<float> t;
  auto lv = random_levels(t, arch, r, false, 0.0);
  Var s = t.leaf(Tensor::uniform({4, 6, 6}, 0, 1, r));
  Rng masks(1);
  CHECK(t.value(nca_step(t, s, lv[0], bernoulli_mask<float>({6, 6}, 0.5, masks))) == t.value(s));
  Rng roll(2);
  CHECK(t.value(nca_rollout(t, s, lv[0], 5, 1.0, roll)) == t.value(s));
}

TEST_CASE("adapter_apply") {
  Tape<double> t;
  Rng r(8);
  auto hv = TensorD::uniform({3, 2, 2}, -1, 1, r);
  Var h = t.leaf(hv);
  AdapterVars zero{t.leaf(TensorD::uniform({2, 3}, -1, 1, r)), t.leaf(TensorD::zeros({3, 2}))};
  CHECK(t.value(adapter_apply(t, h, zero)) == hv);

  // down picks channel 0, up writes it back to channel 0.
  AdapterVars pick{t.leaf(TensorD::from_values({2, 3}, {1, 0, 0, 0, 0, 0})),
                   t.leaf(TensorD::from_values({3, 2}, {1, 0, 0, 0, 0, 0}))};
  const auto& out = t.value(adapter_apply(t, h, pick));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(out[i] == hv[i] + std::max(hv[i], 0.0));
    CHECK(out[4 + i] == hv[4 + i]);
    CHECK(out[8 + i] == hv[8 + i]);
  }
}

TEST_CASE("rollout reproducibility and single step equivalence") {
  Rng r(4);
  auto arch = small_arch();
  Tape<float> t;
  auto lv = random_levels(t, arch, r, true);
  Var s = t.leaf(Tensor::uniform({4, 5, 5}, 0, 1, r));
  Rng a(9), b(9), c(9);
  CHECK(bitwise_equal(t.value(nca_rollout(t, s, lv[0], 4, 0.5, a)), t.value(nca_rollout(t, s, lv[0], 4, 0.5, b))));
  Var one = nca_rollout(t, s, lv[0], 1, 0.5, c);
  Rng d(9);
  auto mask = bernoulli_mask<float>({5, 5}, 0.5, d);
  CHECK(bitwise_equal(t.value(one), t.value(nca_step(t, s, lv[0], mask))));
}

TEST_CASE("m3d_forward shape contract across image sizes") {
  Rng r(6);
  auto arch = small_arch();
  for (Shape s : {Shape{32, 32}, Shape{48, 40}, Shape{64, 64}, Shape{30, 18}}) {
    Tape<float> t;
    auto lv = random_levels(t, arch, r, true);
    Rng fire(1);
    Var y = m3d_forward<float>(t, arch, lv, Tensor::uniform(s, 0, 1, r), fire);
    CHECK(t.shape(y) == s);
  }
  Tape<float> t;
  auto lv = random_levels(t, arch, r, false);
  Rng fire(1);
  CHECK_THROWS_AS(m3d_forward<float>(t, arch, lv, Tensor::zeros({3, 8}), fire), DataError);
}

TEST_CASE("zero-update invariance of m3d_forward") {
  Rng r(12);
  auto arch = small_arch();
  auto img = Tensor::uniform({16, 12}, 0, 1, r);
  Tape<float> t;
  auto lv = random_levels(t, arch, r, false, 0.0);
  Rng f1(1), f2(2);
  const auto a = t.value(m3d_forward<float>(t, arch, lv, img, f1));
  for (float v : a.data()) CHECK(v == 0.0f);
  auto longer = arch;
  longer.steps = {5, 7};
  CHECK(t.value(m3d_forward<float>(t, longer, lv, img, f2)) == a);
}

TEST_CASE("perceptive range bounds the effect of a pixel") {
  Rng r(21);
  ArchConfig arch = small_arch();
  arch.levels = 1;
  arch.kernels = {3};
  const std::size_t steps = 3;
  arch.steps = {steps};
  arch.fire_rate = 0.5;
  const std::size_t n = 15;
  auto img = Tensor::uniform({n, n}, 0, 1, r);
  auto bumped = img;
  const std::size_t ci = 7, cj = 5;
  bumped[ci * n + cj] += 0.5f;
  Tape<double> t;
  auto lv = random_levels(t, arch, r, true, 0.5);
  Rng f1(77), f2(77);
  const auto a = t.value(m3d_forward<double>(t, arch, lv, img.cast<double>(), f1));
  const auto b = t.value(m3d_forward<double>(t, arch, lv, bumped.cast<double>(), f2));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const long dist = std::max(std::labs(long(i) - long(ci)), std::labs(long(j) - long(cj)));
      if (a[i * n + j] != b[i * n + j]) {
        ++changed;
        CHECK(dist <= long(steps));
      }
    }
  CHECK(changed > 0);
}

TEST_CASE("gradients of one nca_step") {
  Rng r(31);
  auto arch = small_arch();
  std::vector<TensorD> params;
  const std::size_t C = arch.channels, H = arch.hidden, A = arch.adapter_width;
  params.push_back(TensorD::uniform({C, 8, 8}, 0, 1, r));
  params.push_back(TensorD::uniform({C, 9}, -0.5, 0.5, r));
  params.push_back(TensorD::uniform({C}, -0.1, 0.1, r));
  params.push_back(TensorD::uniform({H, 2 * C}, -0.5, 0.5, r));
  params.push_back(TensorD::uniform({C, H}, -0.5, 0.5, r));
  params.push_back(TensorD::uniform({A, C}, -0.5, 0.5, r));
  params.push_back(TensorD::uniform({C, A}, -0.5, 0.5, r));
  Rng m(2);
  const auto mask = bernoulli_mask<double>({8, 8}, 0.5, m);
  const auto res = finite_diff_check(
      [&](Tape<double>& t, std::span<const Var> p) {
        LevelVars lv{p[1], p[2], p[3], p[4], AdapterVars{p[5], p[6]}};
        Var s = nca_step(t, p[0], lv, mask);
        return sum(t, activation(t, s, Activation::Sigmoid));
      },
      params, 1e-4, 200, 3);
  CHECK(res.max_rel_error < 1e-3);
}
