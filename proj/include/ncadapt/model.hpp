#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ncadapt/nca.hpp"
#include "ncadapt/tensor.hpp"

namespace ncadapt {

enum class FreezePolicy {
  None,     // sequential training, nothing frozen, no adapters
  NCAdapt,  // MLPs frozen after stage 1; perception convs and the newest adapter train
  FL,       // finest level frozen after stage 1
  FH,       // coarsest level frozen after stage 1
  FC,       // everything except the perception convs frozen after stage 1
  SA,       // one shared adapter, frozen in stage 1 and the only trainable part afterwards
};

enum class PerceptionScope {
  Shared,     // one set of perception convs, retrained in every stage
  PerDomain,  // each domain keeps its own copy of the perception convs
};

FreezePolicy parse_freeze_policy(std::string_view name);
std::string_view to_string(FreezePolicy policy);
PerceptionScope parse_perception_scope(std::string_view name);
std::string_view to_string(PerceptionScope scope);

/// A named, stored tensor. `owner` is "backbone" or "domain-<k>" (1-based).
struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
  std::string owner = "backbone";
};

struct PerceptionParams {
  Param kernel;  // [C, k^d]
  Param bias;    // [C]
};

struct MlpParams {
  Param mlp1;  // [H, 2C]
  Param mlp2;  // [C, H], zero at init
};

struct AdapterLevel {
  Param down;  // [A, C]
  Param up;    // [C, A], zero at init
};

struct DomainAdapter {
  std::vector<AdapterLevel> levels;
};

struct DomainEntry {
  std::string label;
  int adapter = -1;    // index into adapters, -1 when the policy has none
  int perception = 0;  // perception slot used by this domain's head
};

enum class ParamFilter { All, Trainable, PerDomain };

/// Backbone plus per-domain adapters. Domain ids are 0-based internally.
class NcadaptModel {
 public:
  NcadaptModel(ArchConfig arch, FreezePolicy policy, PerceptionScope scope, std::uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  FreezePolicy policy() const { return policy_; }
  PerceptionScope scope() const { return scope_; }
  std::uint64_t seed() const { return seed_; }
  bool frozen() const { return frozen_; }

  /// Registers a new domain and its adapter. Older adapters (and, with a
  /// per-domain scope, older perception copies) stop being trainable.
  int add_domain(const std::string& label);

  /// Sets trainable flags for the policy. The model's adapter layout is fixed
  /// at construction, so the policy must match the one it was built with.
  void apply_freeze_policy(FreezePolicy policy);

  std::size_t domain_count() const { return domains_.size(); }
  const DomainEntry& domain(int id) const { return domains_.at(static_cast<std::size_t>(id)); }
  int find_domain(std::string_view label) const;  // -1 when absent

  /// Sum of tensor extents. PerDomain counts tensors owned by `domain`
  /// (default: the newest domain).
  std::size_t count_params(ParamFilter filter, int domain = -1) const;

  // Canonical order: MLPs by level, perception slots, adapters.
  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  Param& param(std::string_view name);
  const Param& param(std::string_view name) const;

  const MlpParams& mlp(std::size_t level) const { return mlps_.at(level); }
  const PerceptionParams& perception(std::size_t slot, std::size_t level) const {
    return perceptions_.at(slot).at(level);
  }
  const DomainAdapter& adapter(std::size_t index) const { return adapters_.at(index); }
  std::size_t perception_slots() const { return perceptions_.size(); }
  std::size_t adapter_count() const { return adapters_.size(); }

  // Restores flags when loading from disk.
  void set_frozen(bool frozen) { frozen_ = frozen; }

 private:
  Param make_param(std::string name, const Shape& shape, double bound, std::string owner);
  std::vector<PerceptionParams> make_perception(std::size_t slot, const std::string& owner);
  DomainAdapter make_adapter(std::size_t index, const std::string& owner);

  ArchConfig arch_;
  FreezePolicy policy_;
  PerceptionScope scope_;
  std::uint64_t seed_;
  bool frozen_ = false;
  std::vector<MlpParams> mlps_;
  std::vector<std::vector<PerceptionParams>> perceptions_;  // [slot][level]
  std::vector<DomainAdapter> adapters_;
  std::vector<DomainEntry> domains_;
};

/// Tape leaves for one head of the model.
template <class T>
struct BoundModel {
  std::vector<LevelVars> levels;
  std::vector<std::pair<Var, const Param*>> leaves;
};

/// Places the parameters used by `domain`'s head on the tape (domain -1: no
/// adapter, first perception slot). With `track_grad`, trainable tensors
/// become gradient-tracking leaves.
template <class T>
BoundModel<T> bind_model(Tape<T>& tape, const NcadaptModel& model, int domain, bool track_grad);

/// One stochastic forward pass of a head; returns the logit map.
Tensor forward_logits(const NcadaptModel& model, int domain, const Tensor& image, Rng& rng);

/// Parameter counts measured on freshly built two-stage models.
struct ParamAudit {
  std::size_t all = 0;                // backbone
  std::size_t ncadapt_trainable = 0;  // stage 2, shared scope
  std::size_t per_domain = 0;         // storage growth per domain
  std::size_t fc = 0;                 // stage-2 trainable under each ablation policy
  std::size_t fh = 0;
  std::size_t fl = 0;
  std::size_t sa_total = 0;           // stored, backbone plus shared adapter
};

ParamAudit param_audit(const ArchConfig& arch);

// SHA-256 of the tensor's raw bytes, hex encoded.
std::string tensor_sha256(const Tensor& t);

}  // namespace ncadapt
