#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncadapt/metrics.hpp"
#include "ncadapt/model.hpp"
#include "ncadapt/synth.hpp"
#include "ncadapt/trainer.hpp"

namespace ncadapt {

nlohmann::ordered_json to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);

/// Everything one experiment needs. `seed` drives initialisation, batch
/// order, fire masks and the train/test split.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  ArchConfig arch = ArchConfig::default2d();
  TrainConfig train;
  FreezePolicy policy = FreezePolicy::NCAdapt;
  PerceptionScope scope = PerceptionScope::Shared;
  InferenceConfig inference;
  std::filesystem::path data_dir = "data";
  std::filesystem::path runs_dir = "runs";
  std::uint64_t seed = 42;
  double test_fraction = 0.2;
  std::vector<DomainSpec> domains = default_benchmark();

  void validate() const;
  /// Propagates `seed` into the train and inference sub-configs.
  void sync_seeds();
};

/// Canonical JSON form; keys in a fixed order.
nlohmann::ordered_json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// SHA-256 of the canonical JSON form.
std::string config_hash(const RunConfig& config);

}  // namespace ncadapt
