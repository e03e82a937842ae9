#include "ncadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ncadapt {

namespace {

double evaluate(const LossBuilder& f, const std::vector<TensorD>& params) {
  Tape<double> tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.constant(p));
  const Var loss = f(tape, leaves);
  return tape.value(loss)[0];
}

}  // namespace

GradCheckResult finite_diff_check(const LossBuilder& f, const std::vector<TensorD>& params, double eps,
                                  std::size_t max_coords, std::uint64_t seed) {
  Tape<double> tape;
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  const Var loss = f(tape, leaves);
  const auto grads = tape.backward(loss);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) coords.emplace_back(i, j);
  if (max_coords > 0 && coords.size() > max_coords) {
    Rng rng(seed, label_hash("gradcheck"));
    for (std::size_t i = 0; i < max_coords; ++i) std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(max_coords);
  }

  GradCheckResult result;
  std::vector<TensorD> work = params;
  for (auto [i, j] : coords) {
    const double orig = work[i][j];
    work[i][j] = orig + eps;
    const double up = evaluate(f, work);
    work[i][j] = orig - eps;
    const double down = evaluate(f, work);
    work[i][j] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = grads[leaves[i]][j];
    const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.coordinates;
  }
  return result;
}

}  // namespace ncadapt
