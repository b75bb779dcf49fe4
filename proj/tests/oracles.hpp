#pragma once

// Independent scalar reference implementations used by the tests.

#include "mfrflow/ops.hpp"
#include "mfrflow/random.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using mfrflow::Index;
using mfrflow::Tensor;

template <typename Scalar>
Tensor<Scalar> random_tensor(std::mt19937_64& rng, mfrflow::Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  for (Scalar& v : t.values()) v = static_cast<Scalar>(mfrflow::uniform(rng, lo, hi));
  return t;
}

/// Values bounded away from zero, for ops with a kink at zero.
template <typename Scalar>
Tensor<Scalar> random_away_from_zero(std::mt19937_64& rng, mfrflow::Shape shape, double margin = 0.05) {
  Tensor<Scalar> t(std::move(shape));
  for (Scalar& v : t.values()) {
    const double m = mfrflow::uniform(rng, margin, 1.0);
    v = static_cast<Scalar>(mfrflow::uniform01(rng) < 0.5 ? -m : m);
  }
  return t;
}

/// Reduces x to a scalar with fixed weights, so every output coordinate
/// contributes to the gradient.
template <typename Scalar>
mfrflow::Var<Scalar> weighted_sum(const mfrflow::Var<Scalar>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<Scalar> w = random_tensor<Scalar>(rng, x.shape(), 0.5, 1.5);
  return mfrflow::sum(x * x.tape().constant(w));
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& in, const Tensor<Scalar>& k, const Tensor<Scalar>& b, Index stride,
                      Index pad) {
  const Index c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const Index o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  Tensor<Scalar> out({o, ho, wo});
  for (Index oc = 0; oc < o; ++oc)
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        double acc = static_cast<double>(b[oc]);
        for (Index ic = 0; ic < c; ++ic)
          for (Index a = 0; a < kh; ++a)
            for (Index bb = 0; bb < kw; ++bb) {
              const Index y = i * stride + a - pad, x = j * stride + bb - pad;
              if (y < 0 || y >= h || x < 0 || x >= w) continue;
              acc += static_cast<double>(in(ic, y, x)) * static_cast<double>(k(oc, ic, a, bb));
            }
        out(oc, i, j) = static_cast<Scalar>(acc);
      }
  return out;
}

template <typename Scalar>
Tensor<Scalar> cost_volume(const Tensor<Scalar>& fa, const Tensor<Scalar>& fb, double scale) {
  const Index d = fa.dim(0), h = fa.dim(1), w = fa.dim(2), h2 = fb.dim(1), w2 = fb.dim(2);
  Tensor<Scalar> out({h, w, h2, w2});
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      for (Index k = 0; k < h2; ++k)
        for (Index l = 0; l < w2; ++l) {
          double acc = 0;
          for (Index c = 0; c < d; ++c) acc += static_cast<double>(fa(c, i, j)) * static_cast<double>(fb(c, k, l));
          out(i, j, k, l) = static_cast<Scalar>(acc * scale);
        }
  return out;
}

/// Bilinear value of plane (h x w, row-major) at (x, y); cells off the grid
/// count as zero, and a point with no cell of its 2x2 neighbourhood on the
/// grid is 0.
inline double bilinear(const std::vector<double>& plane, Index h, Index w, double x, double y, bool* in = nullptr) {
  const double x0 = std::floor(x), y0 = std::floor(y);
  double acc = 0;
  bool any = false;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const double xx = x0 + dx, yy = y0 + dy;
      const double wgt = (dx ? x - x0 : 1.0 - (x - x0)) * (dy ? y - y0 : 1.0 - (y - y0));
      if (xx >= 0 && xx < static_cast<double>(w) && yy >= 0 && yy < static_cast<double>(h)) {
        any = true;
        acc += wgt * plane[static_cast<std::size_t>(yy * static_cast<double>(w) + xx)];
      }
    }
  if (in) *in = any;
  return any ? acc : 0.0;
}

}  // namespace oracle

namespace oracle {

/// Recovery of one motion-feature entry (channel c, pixel (i, j)) written
/// directly from the definition: prefactor times the sum over patch offsets
/// and history frames of alpha times the shifted history entry.
inline double recovered_entry(const std::vector<std::vector<double>>& hist, const std::vector<double>& alpha,
                              Index n_frames, Index window, Index h, Index w, Index c, Index i, Index j,
                              bool literal_prefactor) {
  const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(window))));
  const Index r = side / 2;
  double acc = 0;
  for (Index q = 0; q < window; ++q) {
    const Index y = i + q / side - r, x = j + q % side - r;
    if (y < 0 || y >= h || x < 0 || x >= w) continue;
    for (Index n = 0; n < n_frames; ++n) {
      const double a = alpha[static_cast<std::size_t>(((n * window + q) * h + i) * w + j)];
      acc += a * hist[static_cast<std::size_t>(n)][static_cast<std::size_t>((c * h + y) * w + x)];
    }
  }
  return literal_prefactor ? acc / static_cast<double>(window * n_frames) : acc;
}

}  // namespace oracle
