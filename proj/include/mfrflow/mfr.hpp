#pragma once

#include "mfrflow/layers.hpp"
#include "mfrflow/lookup.hpp"

#include <vector>

namespace mfrflow {

/// Axes over which coefficient logits are normalized per pixel.
enum class AlphaNormalization {
  joint,    // over (history frame, patch offset)
  spatial,  // over patch offsets only, separately for each history frame
};

struct MfrConfig {
  int history_frames = 2;
  /// Number of offsets in the centered square patch: 1, 9, 25, ...
  int window = 1;
  /// Apply the 1/(window * history_frames) factor to recovered entries.
  bool literal_prefactor = true;
  AlphaNormalization normalization = AlphaNormalization::joint;
  /// One coefficient network for all history frames, or one per frame.
  bool shared_net = true;
  int hidden = 64;
  int kernel_size = 3;

  int patch_side() const;
  int patch_radius() const { return patch_side() / 2; }
  void validate() const;
};

/// Two convolutions joined by a ReLU; maps a motion feature to `window` logits.
template <typename Scalar>
struct CoefficientNetParams {
  struct Net {
    Conv2d<Scalar> conv1;
    Conv2d<Scalar> conv2;
  };
  std::vector<Net> nets;

  CoefficientNetParams() = default;
  CoefficientNetParams(Index feature_channels, const MfrConfig& cfg, std::uint64_t seed);

  std::vector<Parameter<Scalar>*> parameters();
};

/// alpha: [N, window, H, W]; `support` marks (n, offset, pixel) entries whose
/// patch position lies on the feature grid.
template <typename Scalar>
struct CoefficientField {
  Var<Scalar> alpha;
  Mask support;
};

/// Patch support mask [N, window, H, W].
Mask patch_support(const MfrConfig& cfg, Index height, Index width);

template <typename Scalar>
CoefficientField<Scalar> coefficient_forward(Tape<Scalar>& tape, CoefficientNetParams<Scalar>& params,
                                             const std::vector<MotionFeature<Scalar>>& histories,
                                             const MfrConfig& cfg);

/// Fills the entries of `omega` from the histories:
///   out = prefactor * sum_patch sum_n alpha_n * M_{t->t-n}(shifted)
/// Entries outside omega are copied unchanged.
template <typename Scalar>
MotionFeature<Scalar> recover(const MotionFeature<Scalar>& forward, const Mask& omega,
                              const std::vector<MotionFeature<Scalar>>& histories,
                              const CoefficientField<Scalar>& alpha, const MfrConfig& cfg);

/// Validity after recovery: valid entries plus omega entries that receive at
/// least one contribution from a valid history entry.
ValidityMask recovered_validity(const ValidityMask& forward, const Mask& omega,
                                const std::vector<ValidityMask>& histories, const MfrConfig& cfg);

}  // namespace mfrflow
