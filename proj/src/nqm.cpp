#include "ncadapt/nqm.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "ncadapt/errors.hpp"
#include "ncadapt/parallel.hpp"

namespace ncadapt {

NqmRule parse_nqm_rule(std::string_view name) {
  if (name == "min") return NqmRule::Min;
  if (name == "max") return NqmRule::Max;
  throw UsageError("unknown NQM rule '" + std::string(name) + "' (expected min or max)");
}

std::string_view to_string(NqmRule rule) { return rule == NqmRule::Min ? "min" : "max"; }

double nqm_score(std::span<const Tensor> maps) {
  if (maps.size() < 2) throw UsageError("nqm_score: need at least two prediction maps");
  const Shape& shape = maps[0].shape();
  for (const auto& m : maps)
    if (m.shape() != shape) throw UsageError("nqm_score: prediction maps differ in shape");
  const double n = static_cast<double>(maps.size());
  double sd_sum = 0, mean_sum = 0;
  for (std::size_t i = 0; i < maps[0].size(); ++i) {
    double mean = 0;
    for (const auto& m : maps) mean += m[i];
    mean /= n;
    double var = 0;
    for (const auto& m : maps) var += (m[i] - mean) * (m[i] - mean);
    sd_sum += std::sqrt(var / n);
    mean_sum += mean;
  }
  if (mean_sum == 0) return std::numeric_limits<double>::infinity();
  return sd_sum / mean_sum;
}

std::vector<Tensor> sample_probabilities(const NcadaptModel& model, int domain, const Tensor& image,
                                         std::size_t n_samples, const Rng& rng, std::size_t threads) {
  std::vector<Tensor> maps(n_samples);
  parallel_for(n_samples, threads, [&](std::size_t s) {
    Rng r = rng.fork(s);
    Tensor t = forward_logits(model, domain, image, r);
    for (float& v : t.data()) v = 1.0f / (1.0f + std::exp(-v));
    maps[s] = std::move(t);
  });
  return maps;
}

Tensor mean_map(std::span<const Tensor> maps) {
  if (maps.empty()) throw UsageError("mean_map: no maps");
  Tensor out = Tensor::zeros(maps[0].shape());
  for (const auto& m : maps)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
  for (float& v : out.data()) v /= static_cast<float>(maps.size());
  return out;
}

Tensor threshold(const Tensor& probability, float level) {
  Tensor out = probability;
  for (float& v : out.data()) v = v > level ? 1.0f : 0.0f;
  return out;
}

HeadSelection select_head(const NcadaptModel& model, const Tensor& image, std::size_t n_samples, const Rng& rng,
                          NqmRule rule, std::size_t threads) {
  if (model.domain_count() == 0) throw UsageError("select_head: the model has no domains");
  if (n_samples < 2) throw UsageError("select_head: n_samples must be >= 2");
  const int n = static_cast<int>(model.domain_count());

  // Heads are identified by the parameters they read.
  std::map<std::pair<int, int>, int> first_with;
  std::vector<int> rep(n);
  for (int d = 0; d < n; ++d) {
    const auto& e = model.domain(d);
    rep[d] = first_with.try_emplace({e.adapter, e.perception}, d).first->second;
  }
  std::vector<int> unique;
  for (int d = 0; d < n; ++d)
    if (rep[d] == d) unique.push_back(d);

  std::vector<std::vector<Tensor>> maps(n);
  for (int d : unique) maps[d].resize(n_samples);
  parallel_for(unique.size() * n_samples, threads, [&](std::size_t k) {
    const int d = unique[k / n_samples];
    const std::size_t s = k % n_samples;
    Rng r = rng.fork(s);
    Tensor t = forward_logits(model, d, image, r);
    for (float& v : t.data()) v = 1.0f / (1.0f + std::exp(-v));
    maps[d][s] = std::move(t);
  });

  HeadSelection out;
  out.scores.resize(n);
  for (int d = 0; d < n; ++d) out.scores[d] = rep[d] == d ? nqm_score(maps[d]) : out.scores[rep[d]];
  // An empty prediction (infinite score) should not win under either rule.
  auto key = [&](int d) {
    const double s = out.scores[d];
    if (rule == NqmRule::Min || std::isinf(s)) return s;
    return -s;
  };
  int best = 0;
  for (int d = 1; d < n; ++d)
    if (key(d) < key(best)) best = d;
  out.domain = best;
  out.prediction = threshold(mean_map(maps[rep[best]]));
  return out;
}

}  // namespace ncadapt
