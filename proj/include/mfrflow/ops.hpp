#pragma once

#include "mfrflow/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace mfrflow {

// Elementwise arithmetic. Operands must have identical shapes.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s);

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x);
template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x);
template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis);
/// Half-open range [begin, end) along axis.
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, Index axis, Index begin, Index end);
template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x);
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x);
/// Mean over entries where mask != 0. Throws if the mask is empty.
template <typename Scalar>
Var<Scalar> masked_mean(const Var<Scalar>& x, const Mask& mask);
/// Euclidean norm of the whole tensor (rank-0 result).
template <typename Scalar>
Var<Scalar> l2_norm(const Var<Scalar>& x);
/// Euclidean norm along one axis; that axis is removed from the result.
/// The gradient at a zero-norm slice is taken as zero.
template <typename Scalar>
Var<Scalar> l2_norm(const Var<Scalar>& x, Index axis);

/// Softmax normalized jointly over `axes`, per index of the remaining axes,
/// with max subtraction. Entries where `mask` is zero are excluded: they get
/// output 0 and carry no normalization mass.
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, const std::vector<Index>& axes,
                    const Mask* mask = nullptr);

/// Cross-correlation. input [C,H,W], kernel [O,C,kh,kw], bias [O].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                   Index stride, Index padding);

/// 2x2 mean pooling over the trailing two axes (both must be even).
template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x);

template <typename Scalar>
struct SampleResult {
  Var<Scalar> values;  // [C, P]
  std::vector<bool> in_bounds;
};

/// Bilinear sampling of map [C,H,W] at coords [P,2] holding (x, y) in pixels.
/// A sample whose four-cell footprint lies entirely outside the grid yields 0
/// and in_bounds=false; partial footprints treat missing neighbours as 0.
template <typename Scalar>
SampleResult<Scalar> bilinear_sample(const Var<Scalar>& map, const Var<Scalar>& coords);

namespace detail {

/// Footprint of a bilinear sample at (x, y) on an h-by-w grid.
template <typename Scalar>
struct Footprint {
  Index x0 = 0, y0 = 0;
  Scalar fx = 0, fy = 0;
  bool in_bounds = false;
};

template <typename Scalar>
inline Footprint<Scalar> footprint(Scalar x, Scalar y, Index h, Index w) {
  Footprint<Scalar> f;
  f.in_bounds = x > Scalar(-1) && x < Scalar(w) && y > Scalar(-1) && y < Scalar(h);
  if (!f.in_bounds) return f;
  const Scalar xf = std::floor(x), yf = std::floor(y);
  f.x0 = static_cast<Index>(xf);
  f.y0 = static_cast<Index>(yf);
  f.fx = x - xf;
  f.fy = y - yf;
  return f;
}

/// Identifies the bilinear cell of a footprint (and whether it is in bounds).
template <typename Scalar>
inline std::uint64_t footprint_branch(const Footprint<Scalar>& f) {
  if (!f.in_bounds) return 0;
  return (static_cast<std::uint64_t>(f.y0 + 2) << 32) ^ static_cast<std::uint64_t>(f.x0 + 2);
}

/// Samples a single h-by-w plane (row-major) at the footprint; also returns
/// the partial derivatives with respect to x and y.
template <typename Scalar>
inline Scalar sample_plane(const Scalar* plane, Index h, Index w, const Footprint<Scalar>& f,
                           Scalar* dx = nullptr, Scalar* dy = nullptr) {
  auto at = [&](Index yy, Index xx) -> Scalar {
    return (xx >= 0 && xx < w && yy >= 0 && yy < h) ? plane[yy * w + xx] : Scalar(0);
  };
  const Scalar v00 = at(f.y0, f.x0), v01 = at(f.y0, f.x0 + 1);
  const Scalar v10 = at(f.y0 + 1, f.x0), v11 = at(f.y0 + 1, f.x0 + 1);
  const Scalar gx = Scalar(1) - f.fx, gy = Scalar(1) - f.fy;
  if (dx) *dx = gy * (v01 - v00) + f.fy * (v11 - v10);
  if (dy) *dy = gx * (v10 - v00) + f.fx * (v11 - v01);
  return gy * (gx * v00 + f.fx * v01) + f.fy * (gx * v10 + f.fx * v11);
}

/// Scatters g into the footprint's in-range cells (adjoint of sample_plane).
template <typename Scalar>
inline void scatter_plane(Scalar* plane, Index h, Index w, const Footprint<Scalar>& f, Scalar g) {
  const Scalar gx = Scalar(1) - f.fx, gy = Scalar(1) - f.fy;
  auto put = [&](Index yy, Index xx, Scalar wgt) {
    if (xx >= 0 && xx < w && yy >= 0 && yy < h) plane[yy * w + xx] += wgt * g;
  };
  put(f.y0, f.x0, gy * gx);
  put(f.y0, f.x0 + 1, gy * f.fx);
  put(f.y0 + 1, f.x0, f.fy * gx);
  put(f.y0 + 1, f.x0 + 1, f.fy * f.fx);
}

}  // namespace detail

}  // namespace mfrflow
