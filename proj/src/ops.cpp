#include "ncadapt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>

namespace ncadapt {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMatrix<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

// Spatial extents padded on the left to three axes.
std::array<std::size_t, 3> grid3(const Shape& spatial) {
  require(!spatial.empty() && spatial.size() <= 3, "spatial rank must be 1, 2 or 3");
  std::array<std::size_t, 3> g{1, 1, 1};
  std::copy(spatial.begin(), spatial.end(), g.begin() + (3 - spatial.size()));
  return g;
}

Shape spatial_of(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

Shape downsampled_extents(const Shape& spatial, std::size_t factor) {
  require(factor >= 1, "resample factor must be >= 1");
  Shape out(spatial.size());
  for (std::size_t i = 0; i < spatial.size(); ++i) out[i] = ceil_div(spatial[i], factor);
  return out;
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require(va.shape() == vb.shape(), "add: shape mismatch " + shape_str(va.shape()) + " vs " + shape_str(vb.shape()));
  auto out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const BasicTensor<T>& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto& gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require(va.shape() == vb.shape(), "mul: shape mismatch");
  auto out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, const BasicTensor<T>& g) {
    if (t.requires_grad(a)) {
      const auto& vb = t.value(b);
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(b)) {
      const auto& va = t.value(a);
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

template <class T>
Var scale(Tape<T>& tape, Var a, double factor) {
  auto out = tape.value(a);
  const T f = static_cast<T>(factor);
  for (T& x : out.data()) x *= f;
  return tape.record("scale", std::move(out), {a}, [a, f](Tape<T>& t, const BasicTensor<T>& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f * g[i];
  });
}

template <class T>
Var sum(Tape<T>& tape, Var a) {
  const auto& va = tape.value(a);
  T s = 0;
  for (T x : va.data()) s += x;
  return tape.record("sum", BasicTensor<T>::full({1}, s), {a}, [a](Tape<T>& t, const BasicTensor<T>& g) {
    auto& ga = t.grad_buffer(a);
    for (T& x : ga.data()) x += g[0];
  });
}

template <class T>
Var activation(Tape<T>& tape, Var input, Activation kind) {
  auto out = tape.value(input);
  if (kind == Activation::Relu) {
    for (T& x : out.data()) x = x > T(0) ? x : T(0);
    return tape.record("relu", std::move(out), {input}, [input](Tape<T>& t, const BasicTensor<T>& g) {
      const auto& x = t.value(input);
      auto& gi = t.grad_buffer(input);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > T(0)) gi[i] += g[i];
    });
  }
  for (T& x : out.data()) {
    if (x >= T(0)) {
      x = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      x = e / (T(1) + e);
    }
  }
  // The closure reads the sigmoid output through its own node id.
  const auto self = Var{static_cast<std::uint32_t>(tape.size())};
  return tape.record("sigmoid", std::move(out), {input}, [input, self](Tape<T>& t, const BasicTensor<T>& g) {
    const auto& y = t.value(self);
    auto& gi = t.grad_buffer(input);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

namespace {

// Calls fn(channel, tap, oz, oy, ox) for every kernel tap; offsets are relative
// to the output cell.
struct ConvGeometry {
  std::array<std::size_t, 3> grid;
  std::array<std::size_t, 3> kext;  // kernel extent per padded axis
  std::size_t channels;
  std::size_t taps;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& kernel) {
  require(in.size() >= 2, "conv_depthwise: input must be [C, *S]");
  const std::size_t d = in.size() - 1;
  require(kernel.size() == 2, "conv_depthwise: kernel must be [C, k^d]");
  require(kernel[0] == in[0], "conv_depthwise: channel mismatch between input and kernel");
  std::size_t k = std::llround(std::pow(static_cast<double>(kernel[1]), 1.0 / static_cast<double>(d)));
  require(ipow(k, d) == kernel[1], "conv_depthwise: kernel tap count is not k^d");
  require(k % 2 == 1, "conv_depthwise: kernel size must be odd");
  ConvGeometry geo;
  geo.grid = grid3(spatial_of(in));
  geo.kext = {1, 1, 1};
  for (std::size_t i = 3 - d; i < 3; ++i) geo.kext[i] = k;
  geo.channels = in[0];
  geo.taps = kernel[1];
  return geo;
}

// Valid output range [lo, hi) along an axis of length n for tap offset o.
inline void axis_range(std::ptrdiff_t n, std::ptrdiff_t o, std::ptrdiff_t& lo, std::ptrdiff_t& hi) {
  lo = std::max<std::ptrdiff_t>(0, -o);
  hi = std::min<std::ptrdiff_t>(n, n - o);
}

template <class F>
void for_each_tap(const ConvGeometry& g, F&& fn) {
  const auto [D, H, W] = g.grid;
  const std::size_t plane = D * H * W;
  const auto rz = static_cast<std::ptrdiff_t>(g.kext[0] / 2);
  const auto ry = static_cast<std::ptrdiff_t>(g.kext[1] / 2);
  const auto rx = static_cast<std::ptrdiff_t>(g.kext[2] / 2);
  for (std::size_t c = 0; c < g.channels; ++c) {
    std::size_t tap = 0;
    for (std::size_t a = 0; a < g.kext[0]; ++a)
      for (std::size_t b = 0; b < g.kext[1]; ++b)
        for (std::size_t e = 0; e < g.kext[2]; ++e, ++tap) {
          const std::ptrdiff_t oz = static_cast<std::ptrdiff_t>(a) - rz;
          const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(b) - ry;
          const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(e) - rx;
          std::ptrdiff_t z0, z1, y0, y1, x0, x1;
          axis_range(static_cast<std::ptrdiff_t>(D), oz, z0, z1);
          axis_range(static_cast<std::ptrdiff_t>(H), oy, y0, y1);
          axis_range(static_cast<std::ptrdiff_t>(W), ox, x0, x1);
          if (z0 >= z1 || y0 >= y1 || x0 >= x1) continue;
          const std::ptrdiff_t shift = (oz * static_cast<std::ptrdiff_t>(H) + oy) * static_cast<std::ptrdiff_t>(W) + ox;
          // Row callback: output offset of the row start, source = output + shift.
          for (std::ptrdiff_t z = z0; z < z1; ++z)
            for (std::ptrdiff_t y = y0; y < y1; ++y) {
              const std::size_t row = c * plane + (static_cast<std::size_t>(z) * H + static_cast<std::size_t>(y)) * W;
              fn(c, tap, row, shift, static_cast<std::size_t>(x0), static_cast<std::size_t>(x1));
            }
        }
  }
}

}  // namespace

template <class T>
Var conv_depthwise(Tape<T>& tape, Var input, Var kernel, std::optional<Var> bias) {
  const auto& x = tape.value(input);
  const auto& k = tape.value(kernel);
  const ConvGeometry geo = conv_geometry(x.shape(), k.shape());
  if (bias) require(tape.shape(*bias) == Shape{geo.channels}, "conv_depthwise: bias must be [C]");

  auto out = BasicTensor<T>::zeros(x.shape());
  const std::size_t plane = x.size() / geo.channels;
  if (bias) {
    const auto& b = tape.value(*bias);
    for (std::size_t c = 0; c < geo.channels; ++c) std::fill_n(out.ptr() + c * plane, plane, b[c]);
  }
  const T* xp = x.ptr();
  const T* kp = k.ptr();
  T* op = out.ptr();
  for_each_tap(geo, [&](std::size_t c, std::size_t tap, std::size_t row, std::ptrdiff_t shift, std::size_t x0, std::size_t x1) {
    const T w = kp[c * geo.taps + tap];
    T* dst = op + row;
    const T* src = xp + static_cast<std::ptrdiff_t>(row) + shift;
    for (std::size_t i = x0; i < x1; ++i) dst[i] += w * src[i];
  });

  auto fn = [input, kernel, bias, geo](Tape<T>& t, const BasicTensor<T>& g) {
    const T* gp = g.ptr();
    const std::size_t plane = g.size() / geo.channels;
    if (t.requires_grad(input)) {
      const T* kp = t.value(kernel).ptr();
      T* gi = t.grad_buffer(input).ptr();
      for_each_tap(geo, [&](std::size_t c, std::size_t tap, std::size_t row, std::ptrdiff_t shift, std::size_t x0, std::size_t x1) {
        const T w = kp[c * geo.taps + tap];
        const T* src = gp + row;
        T* dst = gi + static_cast<std::ptrdiff_t>(row) + shift;
        for (std::size_t i = x0; i < x1; ++i) dst[i] += w * src[i];
      });
    }
    if (t.requires_grad(kernel)) {
      const T* xp = t.value(input).ptr();
      T* gk = t.grad_buffer(kernel).ptr();
      for_each_tap(geo, [&](std::size_t c, std::size_t tap, std::size_t row, std::ptrdiff_t shift, std::size_t x0, std::size_t x1) {
        const T* go = gp + row;
        const T* src = xp + static_cast<std::ptrdiff_t>(row) + shift;
        T acc = 0;
        for (std::size_t i = x0; i < x1; ++i) acc += go[i] * src[i];
        gk[c * geo.taps + tap] += acc;
      });
    }
    if (bias && t.requires_grad(*bias)) {
      auto& gb = t.grad_buffer(*bias);
      for (std::size_t c = 0; c < geo.channels; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += gp[c * plane + i];
        gb[c] += acc;
      }
    }
  };
  if (bias) return tape.record("conv_depthwise", std::move(out), {input, kernel, *bias}, std::move(fn));
  return tape.record("conv_depthwise", std::move(out), {input, kernel}, std::move(fn));
}

template <class T>
Var pointwise_dense(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  require(x.rank() >= 2, "pointwise_dense: input must be [Cin, *S]");
  require(w.rank() == 2 && w.dim(1) == x.dim(0),
          "pointwise_dense: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  const std::size_t cin = x.dim(0), cout = w.dim(0), cells = x.size() / cin;
  if (bias) require(tape.shape(*bias) == Shape{cout}, "pointwise_dense: bias must be [Cout]");

  Shape out_shape = x.shape();
  out_shape[0] = cout;
  auto out = BasicTensor<T>::zeros(out_shape);
  MapMat<T> Y(out.ptr(), cout, cells);
  Y.noalias() = ConstMapMat<T>(w.ptr(), cout, cin) * ConstMapMat<T>(x.ptr(), cin, cells);
  if (bias) {
    const auto& b = tape.value(*bias);
    for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += b[o];
  }

  auto fn = [input, weight, bias, cin, cout, cells](Tape<T>& t, const BasicTensor<T>& g) {
    ConstMapMat<T> G(g.ptr(), cout, cells);
    if (t.requires_grad(input)) {
      MapMat<T> GX(t.grad_buffer(input).ptr(), cin, cells);
      GX.noalias() += ConstMapMat<T>(t.value(weight).ptr(), cout, cin).transpose() * G;
    }
    if (t.requires_grad(weight)) {
      MapMat<T> GW(t.grad_buffer(weight).ptr(), cout, cin);
      GW.noalias() += G * ConstMapMat<T>(t.value(input).ptr(), cin, cells).transpose();
    }
    if (bias && t.requires_grad(*bias)) {
      auto& gb = t.grad_buffer(*bias);
      for (std::size_t o = 0; o < cout; ++o) gb[o] += G.row(o).sum();
    }
  };
  if (bias) return tape.record("pointwise_dense", std::move(out), {input, weight, *bias}, std::move(fn));
  return tape.record("pointwise_dense", std::move(out), {input, weight}, std::move(fn));
}

template <class T>
Var resample(Tape<T>& tape, Var input, std::size_t factor, ResampleDirection direction, const Shape* up_extents) {
  const auto& x = tape.value(input);
  require(factor >= 1, "resample factor must be >= 1");
  require(x.rank() >= 2, "resample: input must be [C, *S]");
  const std::size_t channels = x.dim(0);
  const Shape in_spatial = spatial_of(x.shape());
  const auto gi = grid3(in_spatial);

  if (direction == ResampleDirection::Down) {
    const Shape out_spatial = downsampled_extents(in_spatial, factor);
    const auto go = grid3(out_spatial);
    std::array<std::size_t, 3> f{1, 1, 1};
    for (std::size_t i = 3 - in_spatial.size(); i < 3; ++i) f[i] = factor;
    const T inv = T(1) / static_cast<T>(f[0] * f[1] * f[2]);
    Shape out_shape{channels};
    out_shape.insert(out_shape.end(), out_spatial.begin(), out_spatial.end());
    auto out = BasicTensor<T>::zeros(out_shape);

    // Visits (output index, clamped input index) pairs of every pooling block.
    auto visit = [gi, go, f, channels](auto&& fn) {
      const std::size_t pin = gi[0] * gi[1] * gi[2], pout = go[0] * go[1] * go[2];
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t z = 0; z < go[0] * f[0]; ++z)
          for (std::size_t y = 0; y < go[1] * f[1]; ++y)
            for (std::size_t xx = 0; xx < go[2] * f[2]; ++xx) {
              const std::size_t iz = std::min(z, gi[0] - 1), iy = std::min(y, gi[1] - 1), ix = std::min(xx, gi[2] - 1);
              const std::size_t o = c * pout + ((z / f[0]) * go[1] + y / f[1]) * go[2] + xx / f[2];
              fn(o, c * pin + (iz * gi[1] + iy) * gi[2] + ix);
            }
    };
    const T* xp = x.ptr();
    T* op = out.ptr();
    visit([&](std::size_t o, std::size_t i) { op[o] += xp[i]; });
    for (T& v : out.data()) v *= inv;
    return tape.record("resample_down", std::move(out), {input}, [input, visit, inv](Tape<T>& t, const BasicTensor<T>& g) {
      T* gx = t.grad_buffer(input).ptr();
      const T* gp = g.ptr();
      visit([&](std::size_t o, std::size_t i) { gx[i] += gp[o] * inv; });
    });
  }

  Shape out_spatial(in_spatial.size());
  for (std::size_t i = 0; i < in_spatial.size(); ++i) out_spatial[i] = in_spatial[i] * factor;
  if (up_extents) {
    require(up_extents->size() == in_spatial.size(), "resample: target rank mismatch");
    for (std::size_t i = 0; i < in_spatial.size(); ++i)
      require(ceil_div((*up_extents)[i], factor) == in_spatial[i],
              "resample: target extents do not match the up-sampled grid");
    out_spatial = *up_extents;
  }
  const auto go = grid3(out_spatial);
  std::array<std::size_t, 3> f{1, 1, 1};
  for (std::size_t i = 3 - in_spatial.size(); i < 3; ++i) f[i] = factor;
  Shape out_shape{channels};
  out_shape.insert(out_shape.end(), out_spatial.begin(), out_spatial.end());
  auto out = BasicTensor<T>::zeros(out_shape);
  auto visit = [gi, go, f, channels](auto&& fn) {
    const std::size_t pin = gi[0] * gi[1] * gi[2], pout = go[0] * go[1] * go[2];
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t z = 0; z < go[0]; ++z)
        for (std::size_t y = 0; y < go[1]; ++y) {
          const std::size_t obase = c * pout + (z * go[1] + y) * go[2];
          const std::size_t ibase = c * pin + ((z / f[0]) * gi[1] + y / f[1]) * gi[2];
          for (std::size_t xx = 0; xx < go[2]; ++xx) fn(obase + xx, ibase + xx / f[2]);
        }
  };
  const T* xp = x.ptr();
  T* op = out.ptr();
  visit([&](std::size_t o, std::size_t i) { op[o] = xp[i]; });
  return tape.record("resample_up", std::move(out), {input}, [input, visit](Tape<T>& t, const BasicTensor<T>& g) {
    T* gx = t.grad_buffer(input).ptr();
    const T* gp = g.ptr();
    visit([&](std::size_t o, std::size_t i) { gx[i] += gp[o]; });
  });
}

template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require(va.rank() >= 1 && vb.rank() == va.rank() && spatial_of(va.shape()) == spatial_of(vb.shape()),
          "concat_channels: spatial shape mismatch");
  Shape s = va.shape();
  s[0] += vb.dim(0);
  std::vector<T> data;
  data.reserve(va.size() + vb.size());
  data.insert(data.end(), va.data().begin(), va.data().end());
  data.insert(data.end(), vb.data().begin(), vb.data().end());
  const std::size_t na = va.size();
  return tape.record("concat", BasicTensor<T>::from_values(s, std::move(data)), {a, b},
                     [a, b, na](Tape<T>& t, const BasicTensor<T>& g) {
                       if (t.requires_grad(a)) {
                         auto& ga = t.grad_buffer(a);
                         for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                       }
                       if (t.requires_grad(b)) {
                         auto& gb = t.grad_buffer(b);
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                       }
                     });
}

template <class T>
Var slice_channels(Tape<T>& tape, Var input, std::size_t begin, std::size_t end) {
  const auto& x = tape.value(input);
  require(x.rank() >= 1 && begin < end && end <= x.dim(0), "slice_channels: invalid channel range");
  const std::size_t plane = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = end - begin;
  std::vector<T> data(x.data().begin() + begin * plane, x.data().begin() + end * plane);
  const std::size_t offset = begin * plane;
  return tape.record("slice", BasicTensor<T>::from_values(s, std::move(data)), {input},
                     [input, offset](Tape<T>& t, const BasicTensor<T>& g) {
                       auto& gx = t.grad_buffer(input);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
                     });
}

template <class T>
Var reshape(Tape<T>& tape, Var input, const Shape& shape) {
  return tape.record("reshape", tape.value(input).reshaped(shape), {input}, [input](Tape<T>& t, const BasicTensor<T>& g) {
    auto& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <class T>
Var mask_cells(Tape<T>& tape, Var input, const BasicTensor<T>& mask) {
  const auto& x = tape.value(input);
  require(x.rank() >= 2 && spatial_of(x.shape()) == mask.shape(), "mask_cells: mask shape must equal the spatial shape");
  auto out = x;
  const std::size_t plane = mask.size();
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= mask[i];
  return tape.record("mask_cells", std::move(out), {input}, [input, mask](Tape<T>& t, const BasicTensor<T>& g) {
    auto& gx = t.grad_buffer(input);
    const std::size_t plane = mask.size();
    for (std::size_t c = 0; c < g.size() / plane; ++c)
      for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += g[c * plane + i] * mask[i];
  });
}

#define NCADAPT_INSTANTIATE_OPS(T)                                                                  \
  template Var add<T>(Tape<T>&, Var, Var);                                                          \
  template Var mul<T>(Tape<T>&, Var, Var);                                                          \
  template Var scale<T>(Tape<T>&, Var, double);                                                     \
  template Var sum<T>(Tape<T>&, Var);                                                               \
  template Var activation<T>(Tape<T>&, Var, Activation);                                            \
  template Var conv_depthwise<T>(Tape<T>&, Var, Var, std::optional<Var>);                           \
  template Var pointwise_dense<T>(Tape<T>&, Var, Var, std::optional<Var>);                          \
  template Var resample<T>(Tape<T>&, Var, std::size_t, ResampleDirection, const Shape*);            \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                                              \
  template Var slice_channels<T>(Tape<T>&, Var, std::size_t, std::size_t);                          \
  template Var reshape<T>(Tape<T>&, Var, const Shape&);                                             \
  template Var mask_cells<T>(Tape<T>&, Var, const BasicTensor<T>&);

NCADAPT_INSTANTIATE_OPS(float)
NCADAPT_INSTANTIATE_OPS(double)

}  // namespace ncadapt
