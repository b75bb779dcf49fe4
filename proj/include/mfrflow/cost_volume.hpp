#pragma once

#include "mfrflow/autodiff.hpp"

#include <cmath>
#include <iosfwd>
#include <vector>

namespace mfrflow {

/// Encoder output for one frame: [D,H,W] at 1/8 input resolution.
template <typename Scalar>
struct FeatureMap {
  Var<Scalar> data;
  int frame_id = 0;
};

/// All-pairs correlation volume and its pooled levels. Level l has shape
/// [H,W,H/2^l,W/2^l]; the leading (i,j) axes index pixels of frame t.
template <typename Scalar>
struct CostVolumePyramid {
  std::vector<Var<Scalar>> levels;
  Scalar scale_factor = Scalar(1);

  int num_levels() const { return static_cast<int>(levels.size()); }
};

template <typename Scalar>
Scalar normalized_scale(Index feature_dim) {
  return Scalar(1) / std::sqrt(static_cast<Scalar>(feature_dim));
}

/// C(i,j,k,l) = scale * sum_d f_t(d,i,j) * f_next(d,k,l).
template <typename Scalar>
Var<Scalar> build_cost_volume(const FeatureMap<Scalar>& f_t, const FeatureMap<Scalar>& f_next,
                              Scalar scale_factor);

/// Level 0 is the volume itself; each further level average-pools the
/// trailing two axes by 2.
template <typename Scalar>
CostVolumePyramid<Scalar> build_pyramid(const Var<Scalar>& volume, int levels,
                                        Scalar scale_factor = Scalar(1));

/// Debug dump of the (i,j) slice of a [H,W,H',W'] volume: header "k,l,value",
/// one row per target pixel.
template <typename Scalar>
void write_volume_slice_csv(std::ostream& os, const Tensor<Scalar>& volume, Index i, Index j);

}  // namespace mfrflow
