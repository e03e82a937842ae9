#include "ncadapt/optim.hpp"

#include <cmath>

namespace ncadapt {

void adam_step(Param& param, const Tensor& grad, AdamMoments& moments, std::uint64_t t, double lr,
               const AdamConfig& config) {
  if (t < 1) throw UsageError("adam_step: t must be >= 1");
  if (grad.shape() != param.value.shape() || moments.m.shape() != grad.shape() || moments.v.shape() != grad.shape())
    throw UsageError("adam_step: shape mismatch for " + param.name);
  if (!param.trainable) return;
  if (!grad.all_finite()) throw NumericError("non-finite gradient for parameter " + param.name);

  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    const double m = b1 * moments.m[i] + (1.0 - b1) * g;
    const double v = b2 * moments.v[i] + (1.0 - b2) * g * g;
    moments.m[i] = static_cast<float>(m);
    moments.v[i] = static_cast<float>(v);
    const double step = lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
    param.value[i] = static_cast<float>(param.value[i] - step);
  }
}

OptimizerState OptimizerState::zeros_like(const NcadaptModel& model) {
  OptimizerState s;
  for (const Param* p : model.parameters())
    s.moments.push_back({Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())});
  return s;
}

}  // namespace ncadapt
