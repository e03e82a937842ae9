#include "ncadapt/model.hpp"

#include <cmath>
#include <utility>

#include "ncadapt/hash.hpp"

namespace ncadapt {

FreezePolicy parse_freeze_policy(std::string_view name) {
  if (name == "none" || name == "sequential") return FreezePolicy::None;
  if (name == "ncadapt") return FreezePolicy::NCAdapt;
  if (name == "fl") return FreezePolicy::FL;
  if (name == "fh") return FreezePolicy::FH;
  if (name == "fc") return FreezePolicy::FC;
  if (name == "sa") return FreezePolicy::SA;
  throw UsageError("unknown freeze policy '" + std::string(name) + "'");
}

std::string_view to_string(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::None: return "none";
    case FreezePolicy::NCAdapt: return "ncadapt";
    case FreezePolicy::FL: return "fl";
    case FreezePolicy::FH: return "fh";
    case FreezePolicy::FC: return "fc";
    case FreezePolicy::SA: return "sa";
  }
  return "none";
}

PerceptionScope parse_perception_scope(std::string_view name) {
  if (name == "shared") return PerceptionScope::Shared;
  if (name == "per_domain") return PerceptionScope::PerDomain;
  throw UsageError("unknown perception scope '" + std::string(name) + "'");
}

std::string_view to_string(PerceptionScope scope) {
  return scope == PerceptionScope::Shared ? "shared" : "per_domain";
}

namespace {
std::string domain_owner(std::size_t index) { return "domain-" + std::to_string(index + 1); }
}  // namespace

NcadaptModel::NcadaptModel(ArchConfig arch, FreezePolicy policy, PerceptionScope scope, std::uint64_t seed)
    : arch_(std::move(arch)), policy_(policy), scope_(scope), seed_(seed) {
  arch_.validate();
  if (scope_ == PerceptionScope::PerDomain && policy_ != FreezePolicy::NCAdapt)
    throw UsageError("per_domain perception scope requires the ncadapt policy");
  const std::size_t C = arch_.channels, H = arch_.hidden;
  for (std::size_t l = 0; l < arch_.levels; ++l) {
    const std::string p = "level" + std::to_string(l) + ".";
    mlps_.push_back({make_param(p + "mlp1", {H, 2 * C}, 1.0 / std::sqrt(2.0 * C), "backbone"),
                     make_param(p + "mlp2", {C, H}, 0.0, "backbone")});
  }
  perceptions_.push_back(make_perception(0, "backbone"));
}

Param NcadaptModel::make_param(std::string name, const Shape& shape, double bound, std::string owner) {
  Param p;
  if (bound > 0) {
    Rng rng(seed_, label_hash(name));
    p.value = Tensor::uniform(shape, -bound, bound, rng);
  } else {
    p.value = Tensor::zeros(shape);
  }
  p.name = std::move(name);
  p.owner = std::move(owner);
  return p;
}

std::vector<PerceptionParams> NcadaptModel::make_perception(std::size_t slot, const std::string& owner) {
  std::vector<PerceptionParams> out;
  for (std::size_t l = 0; l < arch_.levels; ++l) {
    const std::string p = "perception" + std::to_string(slot) + ".level" + std::to_string(l) + ".";
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch_.kernel_taps(l)));
    out.push_back({make_param(p + "kernel", {arch_.channels, arch_.kernel_taps(l)}, bound, owner),
                   make_param(p + "bias", {arch_.channels}, bound, owner)});
  }
  return out;
}

DomainAdapter NcadaptModel::make_adapter(std::size_t index, const std::string& owner) {
  DomainAdapter a;
  const std::size_t C = arch_.channels, A = arch_.adapter_width;
  for (std::size_t l = 0; l < arch_.levels; ++l) {
    const std::string p = "adapter" + std::to_string(index) + ".level" + std::to_string(l) + ".";
    a.levels.push_back({make_param(p + "down", {A, C}, 1.0 / std::sqrt(static_cast<double>(C)), owner),
                        make_param(p + "up", {C, A}, 0.0, owner)});
  }
  return a;
}

int NcadaptModel::find_domain(std::string_view label) const {
  for (std::size_t i = 0; i < domains_.size(); ++i)
    if (domains_[i].label == label) return static_cast<int>(i);
  return -1;
}

int NcadaptModel::add_domain(const std::string& label) {
  if (label.empty()) throw UsageError("domain label must not be empty");
  if (find_domain(label) >= 0) throw UsageError("domain '" + label + "' is already registered");
  const std::size_t id = domains_.size();
  DomainEntry entry{label, -1, 0};

  switch (policy_) {
    case FreezePolicy::NCAdapt: {
      for (auto& a : adapters_)
        for (auto& lv : a.levels) lv.down.trainable = lv.up.trainable = false;
      adapters_.push_back(make_adapter(adapters_.size(), domain_owner(id)));
      entry.adapter = static_cast<int>(adapters_.size() - 1);
      if (scope_ == PerceptionScope::PerDomain) {
        if (id == 0) {
          for (auto& lv : perceptions_[0]) lv.kernel.owner = lv.bias.owner = domain_owner(0);
        } else {
          auto copy = perceptions_.back();
          for (auto& slot : perceptions_)
            for (auto& lv : slot) lv.kernel.trainable = lv.bias.trainable = false;
          const std::string prefix = "perception" + std::to_string(perceptions_.size());
          for (auto& lv : copy)
            for (Param* p : {&lv.kernel, &lv.bias}) {
              p->name = prefix + p->name.substr(p->name.find('.'));
              p->owner = domain_owner(id);
              p->trainable = true;
            }
          perceptions_.push_back(std::move(copy));
        }
        entry.perception = static_cast<int>(perceptions_.size() - 1);
      }
      break;
    }
    case FreezePolicy::SA:
      if (adapters_.empty()) {
        adapters_.push_back(make_adapter(0, "backbone"));
        for (auto& lv : adapters_[0].levels) lv.down.trainable = lv.up.trainable = frozen_;
      }
      entry.adapter = 0;
      break;
    default:
      break;
  }
  domains_.push_back(std::move(entry));
  return static_cast<int>(id);
}

void NcadaptModel::apply_freeze_policy(FreezePolicy policy) {
  if (policy != policy_)
    throw UsageError("freeze policy '" + std::string(to_string(policy)) + "' does not match the model's layout ('" +
                     std::string(to_string(policy_)) + "')");
  frozen_ = true;
  auto set_level = [&](std::size_t l, bool trainable) {
    mlps_[l].mlp1.trainable = mlps_[l].mlp2.trainable = trainable;
    for (auto& slot : perceptions_) slot[l].kernel.trainable = slot[l].bias.trainable = trainable;
  };
  switch (policy_) {
    case FreezePolicy::None:
      break;
    case FreezePolicy::NCAdapt:
    case FreezePolicy::FC:
      for (auto& m : mlps_) m.mlp1.trainable = m.mlp2.trainable = false;
      break;
    case FreezePolicy::FL:
      set_level(arch_.levels - 1, false);
      break;
    case FreezePolicy::FH:
      set_level(0, false);
      break;
    case FreezePolicy::SA:
      for (std::size_t l = 0; l < arch_.levels; ++l) set_level(l, false);
      for (auto& a : adapters_)
        for (auto& lv : a.levels) lv.down.trainable = lv.up.trainable = true;
      break;
  }
}

std::size_t NcadaptModel::count_params(ParamFilter filter, int domain) const {
  if (filter == ParamFilter::PerDomain) {
    if (domain < 0) domain = static_cast<int>(domains_.size()) - 1;
    if (domain < 0) return 0;
  }
  const std::string owner = filter == ParamFilter::PerDomain ? domain_owner(static_cast<std::size_t>(domain)) : "";
  std::size_t n = 0;
  for (const Param* p : parameters()) {
    if (filter == ParamFilter::Trainable && !p->trainable) continue;
    if (filter == ParamFilter::PerDomain && p->owner != owner) continue;
    n += p->value.size();
  }
  return n;
}

std::vector<const Param*> NcadaptModel::parameters() const {
  std::vector<const Param*> out;
  for (const auto& m : mlps_) {
    out.push_back(&m.mlp1);
    out.push_back(&m.mlp2);
  }
  for (const auto& slot : perceptions_)
    for (const auto& lv : slot) {
      out.push_back(&lv.kernel);
      out.push_back(&lv.bias);
    }
  for (const auto& a : adapters_)
    for (const auto& lv : a.levels) {
      out.push_back(&lv.down);
      out.push_back(&lv.up);
    }
  return out;
}

std::vector<Param*> NcadaptModel::parameters() {
  std::vector<Param*> out;
  for (const Param* p : std::as_const(*this).parameters()) out.push_back(const_cast<Param*>(p));
  return out;
}

const Param& NcadaptModel::param(std::string_view name) const {
  for (const Param* p : parameters())
    if (p->name == name) return *p;
  throw UsageError("no parameter named '" + std::string(name) + "'");
}

Param& NcadaptModel::param(std::string_view name) {
  return const_cast<Param&>(std::as_const(*this).param(name));
}

template <class T>
BoundModel<T> bind_model(Tape<T>& tape, const NcadaptModel& model, int domain, bool track_grad) {
  if (domain >= static_cast<int>(model.domain_count())) throw UsageError("unknown domain id " + std::to_string(domain));
  BoundModel<T> bound;
  auto leaf = [&](const Param& p) {
    const bool grad = track_grad && p.trainable;
    Var v = tape.leaf(p.value.template cast<T>(), grad);
    if (grad) bound.leaves.emplace_back(v, &p);
    return v;
  };
  const int slot = domain >= 0 ? model.domain(domain).perception : 0;
  const int adapter = domain >= 0 ? model.domain(domain).adapter : -1;
  for (std::size_t l = 0; l < model.arch().levels; ++l) {
    LevelVars lv;
    const auto& per = model.perception(static_cast<std::size_t>(slot), l);
    lv.kernel = leaf(per.kernel);
    lv.bias = leaf(per.bias);
    lv.mlp1 = leaf(model.mlp(l).mlp1);
    lv.mlp2 = leaf(model.mlp(l).mlp2);
    if (adapter >= 0) {
      const auto& a = model.adapter(static_cast<std::size_t>(adapter)).levels[l];
      lv.adapter = AdapterVars{leaf(a.down), leaf(a.up)};
    }
    bound.levels.push_back(lv);
  }
  return bound;
}

template BoundModel<float> bind_model<float>(Tape<float>&, const NcadaptModel&, int, bool);
template BoundModel<double> bind_model<double>(Tape<double>&, const NcadaptModel&, int, bool);

Tensor forward_logits(const NcadaptModel& model, int domain, const Tensor& image, Rng& rng) {
  Tape<float> tape;
  auto bound = bind_model(tape, model, domain, false);
  Var logits = m3d_forward<float>(tape, model.arch(), bound.levels, image, rng);
  return tape.value(logits);
}

ParamAudit param_audit(const ArchConfig& arch) {
  auto second_stage = [&](FreezePolicy policy) {
    NcadaptModel m(arch, policy, PerceptionScope::Shared, 0);
    m.add_domain("first");
    m.apply_freeze_policy(policy);
    m.add_domain("second");
    return m;
  };
  ParamAudit a;
  a.all = NcadaptModel(arch, FreezePolicy::None, PerceptionScope::Shared, 0).count_params(ParamFilter::All);
  const NcadaptModel nc = second_stage(FreezePolicy::NCAdapt);
  a.ncadapt_trainable = nc.count_params(ParamFilter::Trainable);
  a.per_domain = nc.count_params(ParamFilter::PerDomain);
  a.fc = second_stage(FreezePolicy::FC).count_params(ParamFilter::Trainable);
  a.fh = second_stage(FreezePolicy::FH).count_params(ParamFilter::Trainable);
  a.fl = second_stage(FreezePolicy::FL).count_params(ParamFilter::Trainable);
  a.sa_total = second_stage(FreezePolicy::SA).count_params(ParamFilter::All);
  return a;
}

std::string tensor_sha256(const Tensor& t) {
  return sha256_hex(std::as_bytes(t.data()));
}

}  // namespace ncadapt
