#pragma once

#include "ncadapt/tape.hpp"

namespace ncadapt {

struct DiceFocalOptions {
  double focal_gamma = 2.0;
  double dice_smooth = 1e-5;
  double dice_weight = 1.0;
  double focal_weight = 1.0;
};

/// Soft Dice on sigmoid(logits) plus the pixel-mean binary focal loss.
/// target must hold only 0 and 1 and match the logits' shape.
template <class T>
Var dice_focal_loss(Tape<T>& tape, Var logits, const BasicTensor<T>& target, const DiceFocalOptions& options = {});

}  // namespace ncadapt
