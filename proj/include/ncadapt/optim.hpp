#pragma once

#include <cstdint>
#include <vector>

#include "ncadapt/model.hpp"

namespace ncadapt {

struct AdamConfig {
  double lr = 1.6e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

/// Bias-corrected Adam update of a single parameter at step t (>= 1) with the
/// given learning rate. Frozen parameters are left untouched; a non-finite
/// gradient throws NumericError before anything is modified.
void adam_step(Param& param, const Tensor& grad, AdamMoments& moments, std::uint64_t t, double lr,
               const AdamConfig& config);

/// Adam state for every parameter of a model, in canonical parameter order.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<AdamMoments> moments;

  static OptimizerState zeros_like(const NcadaptModel& model);
};

}  // namespace ncadapt
