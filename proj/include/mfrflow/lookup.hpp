#pragma once

#include "mfrflow/cost_volume.hpp"
#include "mfrflow/flow.hpp"

#include <algorithm>
#include <vector>

namespace mfrflow {

/// Sampling grid of (2r+1)x(2r+1) offsets on each of `levels` pyramid levels.
struct LookupConfig {
  int radius = 3;
  int levels = 4;

  Index grid_size() const { return Index{2} * radius + 1; }
  Index cells_per_level() const { return grid_size() * grid_size(); }
  Index channels() const { return cells_per_level() * levels; }
  void validate() const {
    if (radius < 0) throw ShapeError("lookup radius must be >= 0");
    if (levels < 1) throw ShapeError("lookup levels must be >= 1");
  }
};

/// Lookup result anchored at frame-t pixels: [levels*(2r+1)^2, H, W].
/// Channel order is level-major, then row-major over the offset (dy, dx).
template <typename Scalar>
struct MotionFeature {
  Var<Scalar> data;
  Direction direction = Direction::forward;
};

struct ValidityMask {
  Mask valid;
};

template <typename Scalar>
struct LookupResult {
  MotionFeature<Scalar> feature;
  ValidityMask mask;
};

/// Samples pyramid level l of the (i,j) slice at ((x + F(x)) / 2^l + delta)
/// for every offset delta in [-r,r]^2. Samples whose footprint is entirely
/// outside the level are 0 and flagged invalid. Differentiable w.r.t. the
/// pyramid and the flow.
template <typename Scalar>
LookupResult<Scalar> lookup_motion_feature(const CostVolumePyramid<Scalar>& pyramid,
                                           const Var<Scalar>& flow, const LookupConfig& cfg,
                                           Direction direction = Direction::forward);

/// Validity of the lookup at `flow` ([2,H,W], feature pixels) without
/// sampling any volume. Level l is H/2^l by W/2^l.
template <typename Scalar>
ValidityMask lookup_validity(const Tensor<Scalar>& flow, const LookupConfig& cfg) {
  cfg.validate();
  if (flow.rank() != 3 || flow.dim(0) != 2) throw ShapeError("lookup_validity: flow must be [2,H,W]");
  const Index h = flow.dim(1), w = flow.dim(2), hw = h * w, r = cfg.radius;
  ValidityMask out{Mask({cfg.channels(), h, w})};
  for (int l = 0; l < cfg.levels; ++l) {
    const Index hl = std::max<Index>(h >> l, 1), wl = std::max<Index>(w >> l, 1);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(Index{1} << l);
    for (Index p = 0; p < hw; ++p) {
      const Scalar cx = (static_cast<Scalar>(p % w) + flow[p]) * inv;
      const Scalar cy = (static_cast<Scalar>(p / w) + flow[hw + p]) * inv;
      for (Index dy = -r; dy <= r; ++dy) {
        for (Index dx = -r; dx <= r; ++dx) {
          const Index ch = l * cfg.cells_per_level() + (dy + r) * cfg.grid_size() + (dx + r);
          const bool in = cx + Scalar(dx) > Scalar(-1) && cx + Scalar(dx) < Scalar(wl) &&
                          cy + Scalar(dy) > Scalar(-1) && cy + Scalar(dy) < Scalar(hl);
          out.valid[ch * hw + p] = in ? 1 : 0;
        }
      }
    }
  }
  return out;
}

/// Omega: the set of invalid (vanished) entries, i.e. the complement of valid.
inline Mask invalid_support(const ValidityMask& mask) { return complement(mask.valid); }

/// Literal variant: Omega as the set of entries whose value is exactly zero.
template <typename Scalar>
Mask zero_support(const Tensor<Scalar>& feature) {
  Mask out(feature.shape());
  out.array() = (feature.array() == Scalar(0)).template cast<std::uint8_t>();
  return out;
}

/// Fraction of valid entries.
double nzr(const ValidityMask& mask);

/// Fraction of valid entries per pyramid level. When `pixels` ([H,W]) is
/// given, only those anchor pixels are counted; a level with no counted
/// entries reports 1.
std::vector<double> nzr_per_level(const ValidityMask& mask, int levels, const Mask* pixels = nullptr);

/// Overall fraction over the anchor pixels selected by `pixels`.
double nzr_over(const ValidityMask& mask, const Mask* pixels);

}  // namespace mfrflow
