#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "silcarve/graph.hpp"

namespace silcarve {

enum class OpKind { add, sub, mul, relu, sigmoid, log, neg, scale };

namespace detail {

inline bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

template <typename Scalar>
void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (!is_suffix(a, b))
    throw Error(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename Scalar, typename Fwd, typename Bwd>
Var<Scalar> unary(const char* op, Var<Scalar> a, Fwd fwd, Bwd dfdx) {
  const auto& av = a.value();
  Tensor<Scalar> out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return a.graph->record(op, std::move(out), {a}, [dfdx](Graph<Scalar>& g, std::size_t self) {
    Scalar* ga = g.in_grad(self, 0);
    if (!ga) return;
    const auto& x = g.in_value(self, 0);
    const auto& y = g.value(self);
    const auto& gy = g.out_grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise. Binary ops broadcast `b` over the leading dims of `a`
// (b.shape must be a suffix of a.shape).

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::check_broadcast<Scalar>("add", av.shape, bv.shape);
  Tensor<Scalar> out(av.shape);
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % nb];
  return a.graph->record("add", std::move(out), {a, b}, [nb](Graph<Scalar>& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    if (Scalar* ga = g.in_grad(self, 0))
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    if (Scalar* gb = g.in_grad(self, 1))
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % nb] += gy[i];
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::check_broadcast<Scalar>("sub", av.shape, bv.shape);
  Tensor<Scalar> out(av.shape);
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i % nb];
  return a.graph->record("sub", std::move(out), {a, b}, [nb](Graph<Scalar>& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    if (Scalar* ga = g.in_grad(self, 0))
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    if (Scalar* gb = g.in_grad(self, 1))
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % nb] -= gy[i];
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::check_broadcast<Scalar>("mul", av.shape, bv.shape);
  Tensor<Scalar> out(av.shape);
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i % nb];
  return a.graph->record("mul", std::move(out), {a, b}, [nb](Graph<Scalar>& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    const auto& x = g.in_value(self, 0);
    const auto& y = g.in_value(self, 1);
    if (Scalar* ga = g.in_grad(self, 0))
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * y[i % nb];
    if (Scalar* gb = g.in_grad(self, 1))
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % nb] += gy[i] * x[i];
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  return detail::unary<Scalar>(
      "relu", a, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); },
      [](Scalar x, Scalar) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
}

/// Logistic function, clamped to [eps, 1 - eps] so the output stays strictly inside (0,1).
template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  constexpr Scalar eps = std::numeric_limits<Scalar>::epsilon();
  return detail::unary<Scalar>(
      "sigmoid", a,
      [eps](Scalar x) {
        Scalar s;
        if (x >= Scalar(0)) {
          s = Scalar(1) / (Scalar(1) + std::exp(-x));
        } else {
          const Scalar e = std::exp(x);
          s = e / (Scalar(1) + e);
        }
        return std::clamp(s, eps, Scalar(1) - eps);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> a) {
  for (Scalar v : a.value().data)
    if (!(v > Scalar(0))) throw Error("log: input must be positive");
  return detail::unary<Scalar>(
      "log", a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return Scalar(1) / x; });
}

template <typename Scalar>
Var<Scalar> neg(Var<Scalar> a) {
  return detail::unary<Scalar>(
      "neg", a, [](Scalar x) { return -x; }, [](Scalar, Scalar) { return Scalar(-1); });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  return detail::unary<Scalar>(
      "scale", a, [factor](Scalar x) { return factor * x; },
      [factor](Scalar, Scalar) { return factor; });
}

/// Dispatcher over the elementwise kinds; `b` is required for binary kinds,
/// `factor` is used by `scale`.
template <typename Scalar>
Var<Scalar> elementwise(OpKind kind, Var<Scalar> a, std::optional<Var<Scalar>> b = std::nullopt,
                        Scalar factor = Scalar(1)) {
  const bool binary = kind == OpKind::add || kind == OpKind::sub || kind == OpKind::mul;
  if (binary && !b) throw Error("elementwise: binary op requires a second operand");
  switch (kind) {
    case OpKind::add: return add(a, *b);
    case OpKind::sub: return sub(a, *b);
    case OpKind::mul: return mul(a, *b);
    case OpKind::relu: return relu(a);
    case OpKind::sigmoid: return sigmoid(a);
    case OpKind::log: return log(a);
    case OpKind::neg: return neg(a);
    case OpKind::scale: return scale(a, factor);
  }
  throw Error("elementwise: unknown op");
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a) { return neg(a); }

// ---------------------------------------------------------------------------
// Shape plumbing

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> a, Shape shape) {
  const auto& av = a.value();
  if (numel(shape) != av.size())
    throw Error("reshape: cannot view " + to_string(av.shape) + " as " + to_string(shape));
  Tensor<Scalar> out(std::move(shape), av.data);
  return a.graph->record("reshape", std::move(out), {a}, [](Graph<Scalar>& g, std::size_t self) {
    Scalar* ga = g.in_grad(self, 0);
    const auto& gy = g.out_grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
}

/// Concatenates along the leading dimension.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw Error("concat: empty input");
  Shape shape = parts[0].shape();
  const Shape tail(shape.begin() + 1, shape.end());
  int lead = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != shape.size() || !std::equal(tail.begin(), tail.end(), s.begin() + 1))
      throw Error("concat: shape mismatch " + to_string(shape) + " vs " + to_string(s));
    lead += s[0];
  }
  shape[0] = lead;
  Tensor<Scalar> out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return parts[0].graph->record("concat", std::move(out), parts, [](Graph<Scalar>& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < g.node(self).inputs.size(); ++k) {
      const std::size_t n = g.in_value(self, k).size();
      if (Scalar* gk = g.in_grad(self, k))
        for (std::size_t i = 0; i < n; ++i) gk[i] += gy[o + i];
      o += n;
    }
  });
}

/// Replicates a vector [C] over a spatial grid, giving [C, spatial...].
template <typename Scalar>
Var<Scalar> broadcast_spatial(Var<Scalar> v, const Shape& spatial) {
  const auto& vv = v.value();
  if (vv.rank() != 1) throw Error("broadcast_spatial: expected a vector, got " + to_string(vv.shape));
  const std::size_t p = numel(spatial);
  Shape shape{vv.dim(0)};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  Tensor<Scalar> out(shape);
  for (std::size_t c = 0; c < vv.size(); ++c)
    std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(c * p), p, vv[c]);
  return v.graph->record("broadcast_spatial", std::move(out), {v},
                         [p](Graph<Scalar>& g, std::size_t self) {
                           Scalar* gv = g.in_grad(self, 0);
                           const auto& gy = g.out_grad(self);
                           const std::size_t c_count = gy.size() / p;
                           for (std::size_t c = 0; c < c_count; ++c) {
                             Scalar acc = 0;
                             for (std::size_t i = 0; i < p; ++i) acc += gy[c * p + i];
                             gv[c] += acc;
                           }
                         });
}

/// Adds a per-channel bias b[C] to x[C, ...].
template <typename Scalar>
Var<Scalar> add_channel_bias(Var<Scalar> x, Var<Scalar> b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  if (bv.rank() != 1 || xv.rank() < 1 || xv.dim(0) != bv.dim(0))
    throw Error("add_channel_bias: shape mismatch " + to_string(xv.shape) + " vs " + to_string(bv.shape));
  const std::size_t p = xv.size() / bv.size();
  Tensor<Scalar> out(xv.shape);
  for (std::size_t c = 0; c < bv.size(); ++c)
    for (std::size_t i = 0; i < p; ++i) out[c * p + i] = xv[c * p + i] + bv[c];
  return x.graph->record("add_channel_bias", std::move(out), {x, b},
                         [p](Graph<Scalar>& g, std::size_t self) {
                           const auto& gy = g.out_grad(self);
                           if (Scalar* gx = g.in_grad(self, 0))
                             for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                           if (Scalar* gb = g.in_grad(self, 1)) {
                             const std::size_t c_count = gy.size() / p;
                             for (std::size_t c = 0; c < c_count; ++c) {
                               Scalar acc = 0;
                               for (std::size_t i = 0; i < p; ++i) acc += gy[c * p + i];
                               gb[c] += acc;
                             }
                           }
                         });
}

/// Centered crop of the trailing three dims of x[C, D0, D1, D2] to `size`^3.
template <typename Scalar>
Var<Scalar> crop_center3d(Var<Scalar> x, int size) {
  const auto& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) < size || xv.dim(2) < size || xv.dim(3) < size)
    throw Error("crop_center3d: cannot crop " + to_string(xv.shape) + " to " + std::to_string(size));
  const int c_count = xv.dim(0), d0 = xv.dim(1), d1 = xv.dim(2), d2 = xv.dim(3);
  const int o0 = (d0 - size) / 2, o1 = (d1 - size) / 2, o2 = (d2 - size) / 2;
  Tensor<Scalar> out({c_count, size, size, size});
  auto src_index = [=](int c, int a, int b, int e) {
    return ((static_cast<std::size_t>(c) * d0 + a + o0) * d1 + b + o1) * d2 + e + o2;
  };
  std::size_t o = 0;
  for (int c = 0; c < c_count; ++c)
    for (int a = 0; a < size; ++a)
      for (int b = 0; b < size; ++b)
        for (int e = 0; e < size; ++e) out[o++] = xv[src_index(c, a, b, e)];
  return x.graph->record("crop_center3d", std::move(out), {x},
                         [=](Graph<Scalar>& g, std::size_t self) {
                           Scalar* gx = g.in_grad(self, 0);
                           const auto& gy = g.out_grad(self);
                           std::size_t k = 0;
                           for (int c = 0; c < c_count; ++c)
                             for (int a = 0; a < size; ++a)
                               for (int b = 0; b < size; ++b)
                                 for (int e = 0; e < size; ++e) gx[src_index(c, a, b, e)] += gy[k++];
                         });
}

/// Nearest-neighbour resize of a [H, W] map: output (r, c) reads (r*H/out_h, c*W/out_w).
template <typename Scalar>
Var<Scalar> upsample_nearest(Var<Scalar> x, int out_h, int out_w) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw Error("upsample_nearest: expected [H, W], got " + to_string(xv.shape));
  const int h = xv.dim(0), w = xv.dim(1);
  auto src = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(out_h) * out_w);
  Tensor<Scalar> out({out_h, out_w});
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      const std::size_t s = static_cast<std::size_t>(r * h / out_h) * w + static_cast<std::size_t>(c * w / out_w);
      (*src)[static_cast<std::size_t>(r) * out_w + c] = s;
      out[static_cast<std::size_t>(r) * out_w + c] = xv[s];
    }
  return x.graph->record("upsample_nearest", std::move(out), {x}, [src](Graph<Scalar>& g, std::size_t self) {
    Scalar* gx = g.in_grad(self, 0);
    const auto& gy = g.out_grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[(*src)[i]] += gy[i];
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  const auto& av = a.value();
  Scalar acc = 0;
  for (Scalar v : av.data) acc += v;
  return a.graph->record("sum", Tensor<Scalar>::scalar(acc), {a}, [](Graph<Scalar>& g, std::size_t self) {
    Scalar* ga = g.in_grad(self, 0);
    const Scalar gy = g.out_grad(self)[0];
    const std::size_t n = g.in_value(self, 0).size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += gy;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw Error("matmul: dimension mismatch " + to_string(av.shape) + " vs " + to_string(bv.shape));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<Scalar> out({m, n});
  out.matrix(m, n).noalias() = av.matrix(m, k) * bv.matrix(k, n);
  return a.graph->record("matmul", std::move(out), {a, b}, [m, k, n](Graph<Scalar>& g, std::size_t self) {
    ConstMatrixMap<Scalar> gy(g.out_grad(self).data(), m, n);
    if (Scalar* ga = g.in_grad(self, 0))
      MatrixMap<Scalar>(ga, m, k).noalias() += gy * g.in_value(self, 1).matrix(k, n).transpose();
    if (Scalar* gb = g.in_grad(self, 1))
      MatrixMap<Scalar>(gb, k, n).noalias() += g.in_value(self, 0).matrix(m, k).transpose() * gy;
  });
}

/// Fully connected layer: W[out, in] · x[in] + b[out].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  const int in = static_cast<int>(x.size());
  auto y = matmul(weight, reshape(x, {in, 1}));
  return add(reshape(y, {weight.shape()[0]}), bias);
}

// ---------------------------------------------------------------------------
// Convolution. Spatial geometry is carried in three dims; 2D uses depth 1.

struct ConvGeometry {
  int channels = 1;
  std::array<int, 3> in{1, 1, 1};
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> out{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
  int stride = 1;

  std::size_t kernel_volume() const {
    return static_cast<std::size_t>(kernel[0]) * kernel[1] * kernel[2];
  }
  std::size_t out_pixels() const { return static_cast<std::size_t>(out[0]) * out[1] * out[2]; }
  std::size_t in_pixels() const { return static_cast<std::size_t>(in[0]) * in[1] * in[2]; }
};

namespace detail {

/// Unfolds input patches into a (channels*kvol) x out_pixels matrix.
template <typename Scalar>
void im2col(const Scalar* input, const ConvGeometry& g, Scalar* cols) {
  const std::size_t p = g.out_pixels();
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    const Scalar* chan = input + static_cast<std::size_t>(c) * g.in_pixels();
    for (int kz = 0; kz < g.kernel[0]; ++kz)
      for (int ky = 0; ky < g.kernel[1]; ++ky)
        for (int kx = 0; kx < g.kernel[2]; ++kx, ++row) {
          Scalar* dst = cols + row * p;
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride - g.pad[0] + kz;
            for (int oy = 0; oy < g.out[1]; ++oy) {
              const int iy = oy * g.stride - g.pad[1] + ky;
              const bool row_ok = iz >= 0 && iz < g.in[0] && iy >= 0 && iy < g.in[1];
              const std::size_t base = row_ok ? (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2] : 0;
              for (int ox = 0; ox < g.out[2]; ++ox) {
                const int ix = ox * g.stride - g.pad[2] + kx;
                *dst++ = (row_ok && ix >= 0 && ix < g.in[2]) ? chan[base + ix] : Scalar(0);
              }
            }
          }
        }
  }
}

/// Adjoint of im2col: scatters-and-adds columns back onto the input.
template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* input) {
  const std::size_t p = g.out_pixels();
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    Scalar* chan = input + static_cast<std::size_t>(c) * g.in_pixels();
    for (int kz = 0; kz < g.kernel[0]; ++kz)
      for (int ky = 0; ky < g.kernel[1]; ++ky)
        for (int kx = 0; kx < g.kernel[2]; ++kx, ++row) {
          const Scalar* src = cols + row * p;
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride - g.pad[0] + kz;
            for (int oy = 0; oy < g.out[1]; ++oy) {
              const int iy = oy * g.stride - g.pad[1] + ky;
              const bool row_ok = iz >= 0 && iz < g.in[0] && iy >= 0 && iy < g.in[1];
              const std::size_t base = row_ok ? (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2] : 0;
              for (int ox = 0; ox < g.out[2]; ++ox, ++src) {
                const int ix = ox * g.stride - g.pad[2] + kx;
                if (row_ok && ix >= 0 && ix < g.in[2]) chan[base + ix] += *src;
              }
            }
          }
        }
  }
}

}  // namespace detail

/// Cross-correlation of input[C, H, W] with kernel[F, C, k, k].
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> kernel, int stride, int pad) {
  const auto& x = input.value();
  const auto& w = kernel.value();
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0))
    throw Error("conv2d: shape mismatch input " + to_string(x.shape) + " vs kernel " + to_string(w.shape));
  if (stride < 1 || pad < 0) throw Error("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry geo;
  geo.channels = x.dim(0);
  geo.in = {1, x.dim(1), x.dim(2)};
  geo.kernel = {1, w.dim(2), w.dim(3)};
  geo.pad = {0, pad, pad};
  geo.stride = stride;
  for (int a = 1; a < 3; ++a) {
    const int span = geo.in[a] + 2 * pad - geo.kernel[a];
    if (span < 0 || span % stride != 0)
      throw Error("conv2d: non-integral output size for input " + to_string(x.shape) + ", kernel " +
                  to_string(w.shape) + ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
    geo.out[a] = span / stride + 1;
  }
  const int f = w.dim(0);
  const int ck = static_cast<int>(geo.channels * geo.kernel_volume());
  const int p = static_cast<int>(geo.out_pixels());
  auto cols = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(ck) * p);
  detail::im2col(x.data.data(), geo, cols->data());
  Tensor<Scalar> out({f, geo.out[1], geo.out[2]});
  out.matrix(f, p).noalias() = w.matrix(f, ck) * ConstMatrixMap<Scalar>(cols->data(), ck, p);
  return input.graph->record(
      "conv2d", std::move(out), {input, kernel}, [geo, cols, f, ck, p](Graph<Scalar>& g, std::size_t self) {
        ConstMatrixMap<Scalar> gy(g.out_grad(self).data(), f, p);
        if (Scalar* gw = g.in_grad(self, 1))
          MatrixMap<Scalar>(gw, f, ck).noalias() += gy * ConstMatrixMap<Scalar>(cols->data(), ck, p).transpose();
        if (Scalar* gx = g.in_grad(self, 0)) {
          MatrixRM<Scalar> dcols = g.in_value(self, 1).matrix(f, ck).transpose() * gy;
          detail::col2im(dcols.data(), geo, gx);
        }
      });
}

/// Transposed convolution (adjoint of a stride-`stride`, unpadded conv).
/// input[Cin, spatial...], kernel[Cin, Cout, k...]; output spatial size (in-1)*stride + k.
template <typename Scalar>
Var<Scalar> conv_transpose(Var<Scalar> input, Var<Scalar> kernel, int stride, int dims) {
  if (dims != 2 && dims != 3) throw Error("conv_transpose: dims must be 2 or 3, got " + std::to_string(dims));
  if (stride < 1) throw Error("conv_transpose: stride must be >= 1");
  const auto& x = input.value();
  const auto& w = kernel.value();
  if (x.rank() != dims + 1 || w.rank() != dims + 2 || w.dim(0) != x.dim(0))
    throw Error("conv_transpose: shape mismatch input " + to_string(x.shape) + " vs kernel " + to_string(w.shape));
  const int cin = x.dim(0);
  const int cout = w.dim(1);
  ConvGeometry geo;  // geometry of the forward conv whose adjoint this is
  geo.channels = cout;
  geo.stride = stride;
  const int lead = 3 - dims;
  for (int a = 0; a < dims; ++a) {
    geo.kernel[lead + a] = w.dim(2 + a);
    geo.out[lead + a] = x.dim(1 + a);
    geo.in[lead + a] = (x.dim(1 + a) - 1) * stride + w.dim(2 + a);
  }
  const int ck = static_cast<int>(cout * geo.kernel_volume());
  const int p = static_cast<int>(geo.out_pixels());
  MatrixRM<Scalar> cols = w.matrix(cin, ck).transpose() * x.matrix(cin, p);
  Shape oshape{cout};
  for (int a = 0; a < dims; ++a) oshape.push_back(geo.in[lead + a]);
  Tensor<Scalar> out(oshape);
  detail::col2im(cols.data(), geo, out.data.data());
  return input.graph->record(
      "conv_transpose", std::move(out), {input, kernel}, [geo, cin, ck, p](Graph<Scalar>& g, std::size_t self) {
        MatrixRM<Scalar> dcols(ck, p);
        detail::im2col(g.out_grad(self).data(), geo, dcols.data());
        if (Scalar* gx = g.in_grad(self, 0))
          MatrixMap<Scalar>(gx, cin, p).noalias() += g.in_value(self, 1).matrix(cin, ck) * dcols;
        if (Scalar* gw = g.in_grad(self, 1))
          MatrixMap<Scalar>(gw, cin, ck).noalias() += g.in_value(self, 0).matrix(cin, p) * dcols.transpose();
      });
}

// ---------------------------------------------------------------------------
// Set pooling

namespace detail {
template <typename Scalar>
void check_set(const char* op, const std::vector<Var<Scalar>>& features) {
  if (features.empty()) throw Error(std::string(op) + ": empty feature set");
  for (const auto& f : features)
    if (f.shape() != features[0].shape())
      throw Error(std::string(op) + ": shape mismatch " + to_string(features[0].shape()) + " vs " +
                  to_string(f.shape()));
}
}  // namespace detail

/// Elementwise maximum over a set. Gradient goes to the first argmax in input order.
template <typename Scalar>
Var<Scalar> max_over_set(const std::vector<Var<Scalar>>& features) {
  detail::check_set("max_over_set", features);
  const std::size_t n = features[0].size();
  Tensor<Scalar> out = features[0].value();
  out.grad.clear();
  out.requires_grad = false;
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(n, 0u);
  for (std::size_t m = 1; m < features.size(); ++m) {
    const auto& v = features[m].value();
    for (std::size_t i = 0; i < n; ++i)
      if (v[i] > out[i]) {
        out[i] = v[i];
        (*argmax)[i] = static_cast<std::uint32_t>(m);
      }
  }
  return features[0].graph->record("max_over_set", std::move(out), features,
                                   [argmax](Graph<Scalar>& g, std::size_t self) {
                                     const auto& gy = g.out_grad(self);
                                     for (std::size_t i = 0; i < gy.size(); ++i)
                                       if (Scalar* gm = g.in_grad(self, (*argmax)[i])) gm[i] += gy[i];
                                   });
}

/// Elementwise mean over a set. Values are summed in sorted order so the
/// result does not depend on input order.
template <typename Scalar>
Var<Scalar> avg_over_set(const std::vector<Var<Scalar>>& features) {
  detail::check_set("avg_over_set", features);
  const std::size_t n = features[0].size();
  const std::size_t count = features.size();
  Tensor<Scalar> out(features[0].shape());
  std::vector<Scalar> column(count);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < count; ++m) column[m] = features[m].value()[i];
    std::sort(column.begin(), column.end());
    Scalar acc = 0;
    for (Scalar v : column) acc += v;
    out[i] = acc / static_cast<Scalar>(count);
  }
  return features[0].graph->record("avg_over_set", std::move(out), features,
                                   [count](Graph<Scalar>& g, std::size_t self) {
                                     const auto& gy = g.out_grad(self);
                                     const Scalar share = Scalar(1) / static_cast<Scalar>(count);
                                     for (std::size_t m = 0; m < count; ++m)
                                       if (Scalar* gm = g.in_grad(self, m))
                                         for (std::size_t i = 0; i < gy.size(); ++i) gm[i] += gy[i] * share;
                                   });
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kBceEpsilon = 1e-7;

/// Mean pixel-wise binary cross-entropy; target must be binary {0,1}.
template <typename Scalar>
Var<Scalar> bce_loss(Var<Scalar> pred, const Tensor<Scalar>& target) {
  const auto& pv = pred.value();
  if (pv.shape != target.shape)
    throw Error("bce_loss: shape mismatch " + to_string(pv.shape) + " vs " + to_string(target.shape));
  for (Scalar t : target.data)
    if (t != Scalar(0) && t != Scalar(1)) throw Error("bce_loss: target values must be 0 or 1");
  const Scalar eps = static_cast<Scalar>(kBceEpsilon);
  const Scalar count = static_cast<Scalar>(pv.size());
  Scalar acc = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const Scalar p = std::clamp(pv[i], eps, Scalar(1) - eps);
    acc += target[i] * std::log(p) + (Scalar(1) - target[i]) * std::log(Scalar(1) - p);
  }
  auto tgt = std::make_shared<std::vector<Scalar>>(target.data);
  return pred.graph->record("bce_loss", Tensor<Scalar>::scalar(-acc / count), {pred},
                            [tgt, eps, count](Graph<Scalar>& g, std::size_t self) {
                              Scalar* gp = g.in_grad(self, 0);
                              const auto& pv = g.in_value(self, 0);
                              const Scalar gy = g.out_grad(self)[0];
                              for (std::size_t i = 0; i < pv.size(); ++i) {
                                const Scalar p = std::clamp(pv[i], eps, Scalar(1) - eps);
                                gp[i] += gy * (p - (*tgt)[i]) / (p * (Scalar(1) - p) * count);
                              }
                            });
}

}  // namespace silcarve
