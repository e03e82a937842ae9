#include "ncadapt/nca.hpp"

#include <string>

namespace ncadapt {

void ArchConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("arch: " + m); };
  if (levels < 1) fail("levels must be >= 1");
  if (kernels.size() != levels || steps.size() != levels) fail("kernels and steps need one entry per level");
  for (std::size_t k : kernels)
    if (k % 2 == 0) fail("kernel sizes must be odd");
  for (std::size_t s : steps)
    if (s < 1) fail("steps must be >= 1");
  if (channels < 2) fail("need at least an image and a logit channel");
  if (hidden < 1 || adapter_width < 1) fail("hidden and adapter widths must be >= 1");
  if (coarse_factor < 1) fail("coarse factor must be >= 1");
  if (!(fire_rate > 0.0 && fire_rate <= 1.0)) fail("fire rate must be in (0, 1]");
  if (spatial_rank < 1 || spatial_rank > 3) fail("spatial rank must be 1, 2 or 3");
}

std::size_t ArchConfig::level_scale(std::size_t level) const {
  std::size_t f = 1;
  for (std::size_t i = level + 1; i < levels; ++i) f *= coarse_factor;
  return f;
}

std::size_t ArchConfig::kernel_taps(std::size_t level) const {
  std::size_t t = 1;
  for (std::size_t i = 0; i < spatial_rank; ++i) t *= kernels.at(level);
  return t;
}

std::size_t perception_param_count(const ArchConfig& arch, std::size_t level) {
  return arch.channels * (arch.kernel_taps(level) + 1);
}

std::size_t mlp_param_count(const ArchConfig& arch) {
  return 2 * arch.channels * arch.hidden + arch.hidden * arch.channels;
}

std::size_t level_param_count(const ArchConfig& arch, std::size_t level) {
  return perception_param_count(arch, level) + mlp_param_count(arch);
}

std::size_t backbone_param_count(const ArchConfig& arch) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < arch.levels; ++l) n += level_param_count(arch, l);
  return n;
}

std::size_t adapter_param_count(const ArchConfig& arch) {
  return arch.levels * 2 * arch.channels * arch.adapter_width;
}

template <class T>
Var seed_state(Tape<T>& tape, const BasicTensor<T>& image, std::size_t channels, std::size_t spatial_rank) {
  if (image.rank() != spatial_rank)
    throw UsageError("seed_state: image rank " + std::to_string(image.rank()) + " differs from spatial rank " +
                     std::to_string(spatial_rank));
  Shape s{channels};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  auto state = BasicTensor<T>::zeros(s);
  std::copy(image.data().begin(), image.data().end(), state.data().begin());
  return tape.constant(std::move(state));
}

template <class T>
Var perceive(Tape<T>& tape, Var state, const LevelVars& level) {
  return concat_channels(tape, state, conv_depthwise(tape, state, level.kernel, level.bias));
}

template <class T>
Var adapter_apply(Tape<T>& tape, Var hidden, const AdapterVars& adapter) {
  Var z = activation(tape, pointwise_dense(tape, hidden, adapter.down), Activation::Relu);
  return add(tape, hidden, pointwise_dense(tape, z, adapter.up));
}

template <class T>
Var nca_step(Tape<T>& tape, Var state, const LevelVars& level, const BasicTensor<T>& fire_mask,
             AdapterPlacement placement) {
  Var h = activation(tape, pointwise_dense(tape, perceive(tape, state, level), level.mlp1), Activation::Relu);
  Var update = pointwise_dense(tape, h, level.mlp2);
  if (level.adapter && placement == AdapterPlacement::Update) update = adapter_apply(tape, update, *level.adapter);
  Var next = add(tape, state, mask_cells(tape, update, fire_mask));
  if (level.adapter && placement == AdapterPlacement::PostState) next = adapter_apply(tape, next, *level.adapter);
  return next;
}

template <class T>
Var nca_rollout(Tape<T>& tape, Var state, const LevelVars& level, std::size_t steps, double fire_rate, Rng& rng,
                AdapterPlacement placement) {
  if (steps < 1) throw UsageError("nca_rollout: steps must be >= 1");
  const Shape& s = tape.shape(state);
  const Shape spatial(s.begin() + 1, s.end());
  for (std::size_t i = 0; i < steps; ++i) {
    auto mask = bernoulli_mask<T>(spatial, fire_rate, rng);
    state = nca_step(tape, state, level, mask, placement);
  }
  return state;
}

template <class T>
Var m3d_forward(Tape<T>& tape, const ArchConfig& arch, std::span<const LevelVars> levels, const BasicTensor<T>& image,
                Rng& rng) {
  if (levels.size() != arch.levels) throw UsageError("m3d_forward: level parameter count differs from arch");
  if (image.rank() != arch.spatial_rank) throw UsageError("m3d_forward: image rank differs from arch spatial rank");
  const std::size_t coarsest = arch.level_scale(0);
  for (std::size_t e : image.shape())
    if (e < coarsest)
      throw DataError("m3d_forward: image extent " + std::to_string(e) + " is smaller than the coarse factor " +
                      std::to_string(coarsest));

  Shape with_channel{1};
  with_channel.insert(with_channel.end(), image.shape().begin(), image.shape().end());
  const Var full = tape.constant(image.reshaped(with_channel));

  Var state;
  for (std::size_t l = 0; l < arch.levels; ++l) {
    const std::size_t f = arch.level_scale(l);
    Var img = f > 1 ? resample(tape, full, f, ResampleDirection::Down) : full;
    const Shape& is = tape.shape(img);
    const Shape spatial(is.begin() + 1, is.end());
    if (l == 0) {
      state = seed_state(tape, tape.value(img).reshaped(spatial), arch.channels, arch.spatial_rank);
    } else {
      Var up = resample(tape, state, arch.coarse_factor, ResampleDirection::Up, &spatial);
      state = concat_channels(tape, img, slice_channels(tape, up, 1, arch.channels));
    }
    state = nca_rollout(tape, state, levels[l], arch.steps[l], arch.fire_rate, rng, arch.adapter_placement);
  }
  return reshape(tape, slice_channels(tape, state, 1, 2), image.shape());
}

#define NCADAPT_INSTANTIATE_NCA(T)                                                                              \
  template Var seed_state<T>(Tape<T>&, const BasicTensor<T>&, std::size_t, std::size_t);                        \
  template Var perceive<T>(Tape<T>&, Var, const LevelVars&);                                                    \
  template Var adapter_apply<T>(Tape<T>&, Var, const AdapterVars&);                                             \
  template Var nca_step<T>(Tape<T>&, Var, const LevelVars&, const BasicTensor<T>&, AdapterPlacement);           \
  template Var nca_rollout<T>(Tape<T>&, Var, const LevelVars&, std::size_t, double, Rng&, AdapterPlacement);    \
  template Var m3d_forward<T>(Tape<T>&, const ArchConfig&, std::span<const LevelVars>, const BasicTensor<T>&, Rng&);

NCADAPT_INSTANTIATE_NCA(float)
NCADAPT_INSTANTIATE_NCA(double)

}  // namespace ncadapt
