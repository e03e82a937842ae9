#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncadapt/model.hpp"
#include "ncadapt/optim.hpp"
#include "ncadapt/trainer.hpp"

namespace ncadapt {

/// A stage checkpoint directory:
///   manifest.json   tensor table (name, shape, offset, length, trainable, owner), model layout, hashes
///   weights.bin     little-endian f32 tensors in manifest order
///   optimizer.bin   optional; Adam m for every tensor, then v, same layout as weights.bin
///   ewc.bin         optional; per anchor, reference values then Fisher diagonals
struct Checkpoint {
  static constexpr int kSchemaVersion = 1;

  NcadaptModel model;
  std::optional<OptimizerState> optimizer;
  std::vector<EwcState> ewc;
  std::string config_hash;
  std::size_t stage = 0;
};

/// Refuses to write into a directory that already holds a checkpoint.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

/// Validates schema, offsets, lengths and the weights hash before building
/// the model; nothing is returned on failure.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// SHA-256 per tensor name, for before/after audits.
std::vector<std::pair<std::string, std::string>> tensor_hashes(const NcadaptModel& model);

}  // namespace ncadapt
