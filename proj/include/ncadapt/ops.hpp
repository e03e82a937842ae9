#pragma once

#include <cstddef>
#include <optional>

#include "ncadapt/tape.hpp"

namespace ncadapt {

enum class Activation { Relu, Sigmoid };
enum class ResampleDirection { Down, Up };

// Elementwise arithmetic on equal shapes.
template <class T> Var add(Tape<T>& tape, Var a, Var b);
template <class T> Var mul(Tape<T>& tape, Var a, Var b);
template <class T> Var scale(Tape<T>& tape, Var a, double factor);
template <class T> Var sum(Tape<T>& tape, Var a);

template <class T> Var activation(Tape<T>& tape, Var input, Activation kind);

/// Per-channel cross-correlation over the spatial axes of input [C, *S] with
/// kernel [C, k^d] (taps in row-major order over the d spatial axes) and zero
/// padding of (k-1)/2. Output has the input's shape.
template <class T>
Var conv_depthwise(Tape<T>& tape, Var input, Var kernel, std::optional<Var> bias = std::nullopt);

/// Per-cell linear map: [Cin, *S] x weight [Cout, Cin] -> [Cout, *S].
template <class T>
Var pointwise_dense(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias = std::nullopt);

/// Down: mean pooling over factor^d blocks; trailing edges are padded by
/// replication up to a multiple of the factor. Up: nearest-neighbour
/// replication, cropped to `up_extents` when given (default: extent * factor).
template <class T>
Var resample(Tape<T>& tape, Var input, std::size_t factor, ResampleDirection direction,
             const Shape* up_extents = nullptr);

template <class T> Var concat_channels(Tape<T>& tape, Var a, Var b);
template <class T> Var slice_channels(Tape<T>& tape, Var input, std::size_t begin, std::size_t end);
template <class T> Var reshape(Tape<T>& tape, Var input, const Shape& shape);

/// Multiplies every channel of input [C, *S] by a constant cell mask [*S].
template <class T>
Var mask_cells(Tape<T>& tape, Var input, const BasicTensor<T>& mask);

// Spatial extents after a down-sampling step.
Shape downsampled_extents(const Shape& spatial, std::size_t factor);

}  // namespace ncadapt
