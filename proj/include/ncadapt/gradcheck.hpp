#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ncadapt/tape.hpp"

namespace ncadapt {

// Builds a scalar loss from leaves holding the parameters. Must be
// deterministic: any fire masks have to come from a fixed seed.
using LossBuilder = std::function<Var(Tape<double>&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients with central differences, all in double
/// precision. Relative error per coordinate is
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
/// With max_coords > 0, that many coordinates are sampled (seeded) instead of
/// checking every one.
GradCheckResult finite_diff_check(const LossBuilder& f, const std::vector<TensorD>& params, double eps = 1e-3,
                                  std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace ncadapt
