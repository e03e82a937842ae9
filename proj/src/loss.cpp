#include "ncadapt/loss.hpp"

#include <cmath>
#include <vector>

namespace ncadapt {

namespace {
// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
}  // namespace

template <class T>
Var dice_focal_loss(Tape<T>& tape, Var logits, const BasicTensor<T>& target, const DiceFocalOptions& options) {
  const auto& z = tape.value(logits);
  if (z.shape() != target.shape())
    throw UsageError("dice_focal_loss: logits " + shape_str(z.shape()) + " vs target " + shape_str(target.shape()));
  for (T t : target.data())
    if (t != T(0) && t != T(1)) throw DataError("dice_focal_loss: target values must be 0 or 1");

  const std::size_t n = z.size();
  const double gamma = options.focal_gamma, eps = options.dice_smooth;
  std::vector<double> prob(n);
  double inter = 0, psum = 0, tsum = 0, focal = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = z[i];
    const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    prob[i] = p;
    inter += p * target[i];
    psum += p;
    tsum += target[i];
    // log p = -softplus(-x), log(1-p) = -softplus(x)
    focal += target[i] > 0 ? std::pow(1.0 - p, gamma) * softplus(-x) : std::pow(p, gamma) * softplus(x);
  }
  const double denom = psum + tsum + eps;
  const double dice = 1.0 - (2.0 * inter + eps) / denom;
  const double loss = options.dice_weight * dice + options.focal_weight * focal / static_cast<double>(n);

  return tape.record(
      "dice_focal_loss", BasicTensor<T>::full({1}, static_cast<T>(loss)), {logits},
      [logits, target, prob = std::move(prob), inter, denom, options](Tape<T>& t, const BasicTensor<T>& g) {
        const auto& z = t.value(logits);
        auto& gz = t.grad_buffer(logits);
        const double gamma = options.focal_gamma, eps = options.dice_smooth;
        const double n = static_cast<double>(z.size());
        const double num = 2.0 * inter + eps;
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double p = prob[i], q = 1.0 - p, x = z[i];
          const double ddice_dp = -(2.0 * target[i] * denom - num) / (denom * denom);
          double dfocal_dz;
          if (target[i] > 0) {
            // d/dz [-(1-p)^g log p]
            dfocal_dz = -gamma * std::pow(q, gamma) * p * softplus(-x) - std::pow(q, gamma + 1.0);
          } else {
            // d/dz [-p^g log(1-p)]
            dfocal_dz = gamma * std::pow(p, gamma) * q * softplus(x) + std::pow(p, gamma + 1.0);
          }
          const double d = options.dice_weight * ddice_dp * p * q + options.focal_weight * dfocal_dz / n;
          gz[i] += static_cast<T>(g[0] * d);
        }
      });
}

template Var dice_focal_loss<float>(Tape<float>&, Var, const BasicTensor<float>&, const DiceFocalOptions&);
template Var dice_focal_loss<double>(Tape<double>&, Var, const BasicTensor<double>&, const DiceFocalOptions&);

}  // namespace ncadapt
