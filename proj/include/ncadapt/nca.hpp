#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ncadapt/ops.hpp"
#include "ncadapt/rng.hpp"

namespace ncadapt {

// Where a domain adapter hooks into the update rule.
enum class AdapterPlacement {
  Update,     // transforms the MLP's update vector before the fire-masked residual add
  PostState,  // transforms the state after the residual add
};

/// Architecture of the multi-level NCA backbone. Level 0 is the coarsest.
struct ArchConfig {
  std::size_t channels = 16;
  std::size_t hidden = 68;
  std::size_t levels = 2;
  std::vector<std::size_t> kernels{7, 3};
  std::vector<std::size_t> steps{10, 10};
  std::size_t coarse_factor = 4;
  double fire_rate = 0.5;
  std::size_t spatial_rank = 2;
  std::size_t adapter_width = 6;
  AdapterPlacement adapter_placement = AdapterPlacement::Update;

  static ArchConfig default2d() { return ArchConfig{}; }
  static ArchConfig default3d() {
    ArchConfig a;
    a.spatial_rank = 3;
    return a;
  }

  void validate() const;

  // Down-sampling factor of `level` relative to the input image.
  std::size_t level_scale(std::size_t level) const;
  std::size_t kernel_taps(std::size_t level) const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

std::size_t perception_param_count(const ArchConfig& arch, std::size_t level);
std::size_t mlp_param_count(const ArchConfig& arch);
std::size_t level_param_count(const ArchConfig& arch, std::size_t level);
std::size_t backbone_param_count(const ArchConfig& arch);
std::size_t adapter_param_count(const ArchConfig& arch);

struct AdapterVars {
  Var down;  // [A, C]
  Var up;    // [C, A]
};

/// Tape handles for the parameters one level needs during a rollout.
struct LevelVars {
  Var kernel;  // [C, k^d]
  Var bias;    // [C]
  Var mlp1;    // [H, 2C]
  Var mlp2;    // [C, H]
  std::optional<AdapterVars> adapter;
};

/// Channel 0 holds the image, every other channel starts at zero.
template <class T>
Var seed_state(Tape<T>& tape, const BasicTensor<T>& image, std::size_t channels, std::size_t spatial_rank);

template <class T>
Var perceive(Tape<T>& tape, Var state, const LevelVars& level);

/// Residual bottleneck h + up(relu(down(h))) applied per cell.
template <class T>
Var adapter_apply(Tape<T>& tape, Var hidden, const AdapterVars& adapter);

template <class T>
Var nca_step(Tape<T>& tape, Var state, const LevelVars& level, const BasicTensor<T>& fire_mask,
             AdapterPlacement placement = AdapterPlacement::Update);

template <class T>
Var nca_rollout(Tape<T>& tape, Var state, const LevelVars& level, std::size_t steps, double fire_rate, Rng& rng,
                AdapterPlacement placement = AdapterPlacement::Update);

/// Coarse-to-fine forward pass. Returns the logit map with the image's shape.
template <class T>
Var m3d_forward(Tape<T>& tape, const ArchConfig& arch, std::span<const LevelVars> levels, const BasicTensor<T>& image,
                Rng& rng);

}  // namespace ncadapt
