#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "ncadapt/model.hpp"

namespace ncadapt {

// Which NQM value picks the head. Min favours the least variable prediction.
enum class NqmRule { Min, Max };

NqmRule parse_nqm_rule(std::string_view name);
std::string_view to_string(NqmRule rule);

/// Sum of per-pixel population SD over the sum of per-pixel means across N
/// maps. Infinity when every mean is zero.
double nqm_score(std::span<const Tensor> maps);

/// Probability maps (sigmoid of the logit channel) of n_samples stochastic
/// passes of one head. Sample s draws its fire masks from rng.fork(s).
std::vector<Tensor> sample_probabilities(const NcadaptModel& model, int domain, const Tensor& image,
                                         std::size_t n_samples, const Rng& rng, std::size_t threads = 1);

Tensor mean_map(std::span<const Tensor> maps);
Tensor threshold(const Tensor& probability, float level = 0.5f);

struct HeadSelection {
  int domain = -1;
  Tensor prediction;            // binary mask of the winning head
  std::vector<double> scores;   // NQM per registered domain
};

/// Scores every head by NQM over n_samples passes and keeps the winner
/// (ties go to the lowest domain id). Heads share the per-sample fire-mask
/// streams, and heads with identical parameters are evaluated once.
HeadSelection select_head(const NcadaptModel& model, const Tensor& image, std::size_t n_samples, const Rng& rng,
                          NqmRule rule = NqmRule::Min, std::size_t threads = 1);

}  // namespace ncadapt
