#include <cmath>
#include <doctest.h>

#include "ncadapt/model.hpp"

using namespace ncadapt;

namespace {

NcadaptModel two_stage(FreezePolicy policy, const ArchConfig& arch = ArchConfig::default3d(),
                       PerceptionScope scope = PerceptionScope::Shared) {
  NcadaptModel m(arch, policy, scope, 1);
  m.add_domain("a");
  m.apply_freeze_policy(policy);
  m.add_domain("b");
  return m;
}

}  // namespace

TEST_CASE("fresh backbone counts") {
  NcadaptModel m(ArchConfig::default3d(), FreezePolicy::NCAdapt, PerceptionScope::Shared, 1);
  CHECK(m.count_params(ParamFilter::All) == 12480);
  m.add_domain("a");
  CHECK(m.count_params(ParamFilter::All) == 12480 + 384);
  CHECK(m.count_params(ParamFilter::PerDomain) == 384);
  CHECK(m.count_params(ParamFilter::Trainable) == 12480 + 384);
  m.apply_freeze_policy(FreezePolicy::NCAdapt);
  m.add_domain("b");
  m.add_domain("c");
  CHECK(m.count_params(ParamFilter::All) == 12480 + 3 * 384);
  CHECK(m.adapter_count() == 3);
  CHECK_THROWS_AS(m.add_domain("b"), UsageError);
}

TEST_CASE("trainable counts per freeze policy") {
  CHECK(two_stage(FreezePolicy::None).count_params(ParamFilter::Trainable) == 12480);
  CHECK(two_stage(FreezePolicy::NCAdapt).count_params(ParamFilter::Trainable) == 6336);
  CHECK(two_stage(FreezePolicy::FC).count_params(ParamFilter::Trainable) == 5952);
  CHECK(two_stage(FreezePolicy::FH).count_params(ParamFilter::Trainable) == 3712);
  CHECK(two_stage(FreezePolicy::FL).count_params(ParamFilter::Trainable) == 8768);
  auto sa = two_stage(FreezePolicy::SA);
  CHECK(sa.count_params(ParamFilter::All) == 12864);
  CHECK(sa.count_params(ParamFilter::Trainable) == 384);

  auto nc = two_stage(FreezePolicy::NCAdapt);
  nc.add_domain("c");
  CHECK(nc.count_params(ParamFilter::Trainable) == 6336);

  const auto audit = param_audit(ArchConfig::default3d());
  CHECK(audit.all == 12480);
  CHECK(audit.ncadapt_trainable == 6336);
  CHECK(audit.per_domain == 384);
  CHECK(audit.fc == 5952);
  CHECK(audit.fh == 3712);
  CHECK(audit.fl == 8768);
  CHECK(audit.sa_total == 12864);
}

TEST_CASE("freeze policy must match the model") {
  NcadaptModel m(ArchConfig::default2d(), FreezePolicy::NCAdapt, PerceptionScope::Shared, 1);
  m.add_domain("a");
  CHECK_THROWS_AS(m.apply_freeze_policy(FreezePolicy::FC), UsageError);
  CHECK_THROWS_AS(NcadaptModel(ArchConfig::default2d(), FreezePolicy::None, PerceptionScope::PerDomain, 1),
                  UsageError);
}

TEST_CASE("per-domain perception scope") {
  auto m = two_stage(FreezePolicy::NCAdapt, ArchConfig::default3d(), PerceptionScope::PerDomain);
  CHECK(m.perception_slots() == 2);
  CHECK(m.count_params(ParamFilter::PerDomain) == 6336);
  CHECK(m.count_params(ParamFilter::Trainable) == 6336);
  CHECK(m.domain(0).perception == 0);
  CHECK(m.domain(1).perception == 1);
  // The new slot starts from the latest trained copy.
  CHECK(m.perception(1, 0).kernel.value == m.perception(0, 0).kernel.value);
  CHECK_FALSE(m.perception(0, 0).kernel.trainable);
}

TEST_CASE("initialisation") {
  NcadaptModel m(ArchConfig::default2d(), FreezePolicy::NCAdapt, PerceptionScope::Shared, 5);
  m.add_domain("a");
  for (std::size_t l = 0; l < 2; ++l)
    for (float v : m.mlp(l).mlp2.value.data()) CHECK(v == 0.0f);
  for (float v : m.adapter(0).levels[0].up.value.data()) CHECK(v == 0.0f);
  const float bound = 1.0f / std::sqrt(32.0f);
  for (float v : m.mlp(0).mlp1.value.data()) CHECK(std::abs(v) <= bound);

  NcadaptModel same(ArchConfig::default2d(), FreezePolicy::NCAdapt, PerceptionScope::Shared, 5);
  same.add_domain("a");
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    CHECK(bitwise_equal(m.parameters()[i]->value, same.parameters()[i]->value));
}

TEST_CASE("adding a domain leaves older heads unchanged") {
  NcadaptModel m(ArchConfig::default2d(), FreezePolicy::NCAdapt, PerceptionScope::Shared, 5);
  m.add_domain("a");
  // Give the head a non-trivial update so the comparison means something.
  Rng r(3);
  m.param("level0.mlp2").value = Tensor::uniform({16, 68}, -0.05, 0.05, r);
  m.param("adapter0.level1.up").value = Tensor::uniform({16, 6}, -0.2, 0.2, r);
  auto img = Tensor::uniform({32, 32}, 0, 1, r);
  Rng f1(9), f2(9);
  const auto before = forward_logits(m, 0, img, f1);
  m.apply_freeze_policy(FreezePolicy::NCAdapt);
  m.add_domain("b");
  CHECK(bitwise_equal(before, forward_logits(m, 0, img, f2)));
}

TEST_CASE("fresh model predicts background") {
  NcadaptModel m(ArchConfig::default2d(), FreezePolicy::NCAdapt, PerceptionScope::Shared, 5);
  m.add_domain("a");
  Rng r(1);
  const auto logits = forward_logits(m, 0, Tensor::uniform({32, 32}, 0, 1, r), r);
  for (float v : logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("policy names") {
  CHECK(parse_freeze_policy("ncadapt") == FreezePolicy::NCAdapt);
  CHECK(parse_freeze_policy("sequential") == FreezePolicy::None);
  CHECK(to_string(FreezePolicy::FH) == "fh");
  CHECK_THROWS_AS(parse_freeze_policy("frozen"), UsageError);
  CHECK(parse_perception_scope("per_domain") == PerceptionScope::PerDomain);
}
