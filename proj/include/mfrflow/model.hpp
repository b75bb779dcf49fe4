#pragma once

#include "mfrflow/cost_volume.hpp"
#include "mfrflow/layers.hpp"
#include "mfrflow/lookup.hpp"
#include "mfrflow/mfr.hpp"

#include <string>
#include <vector>

namespace mfrflow {

enum class CostScale {
  normalized,  // dot products divided by sqrt(D)
  literal,     // plain dot products
};

enum class OmegaMode {
  geometric,   // invalid = sample footprint outside the volume
  zero_value,  // invalid = motion-feature entry exactly zero
};

struct ModelConfig {
  int encoder_width1 = 16;
  int encoder_width2 = 24;
  int feature_dim = 32;
  int hidden_dim = 32;
  int context_dim = 32;
  int motion_corr_dim = 48;
  int motion_flow_dim = 16;
  int motion_dim = 32;
  int flow_head_hidden = 64;
  int iterations = 6;
  int history_iterations = 6;
  LookupConfig lookup;
  MfrConfig mfr;
  bool recovery = true;
  /// Stop gradients through the lookup coordinates between iterations.
  bool detach_flow = true;
  CostScale cost_scale = CostScale::normalized;
  OmegaMode omega = OmegaMode::geometric;

  void validate() const;
  int frame_count() const { return mfr.history_frames + 2; }
};

/// Three stride-2 stages, 3x3 kernels: [3,H,W] -> [out,H/8,W/8].
template <typename Scalar>
struct Encoder {
  Conv2d<Scalar> conv1, conv2, conv3;

  Encoder() = default;
  Encoder(const std::string& name, const ModelConfig& cfg, Index out, std::uint64_t seed);
  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& image);
};

template <typename Scalar>
struct MotionEncoder {
  Conv2d<Scalar> corr, flow, out;
};

template <typename Scalar>
struct ConvGru {
  Conv2d<Scalar> z, r, q;
};

template <typename Scalar>
struct FlowHead {
  Conv2d<Scalar> conv1, conv2;
};

template <typename Scalar>
struct ModelParams {
  Encoder<Scalar> feature;
  Encoder<Scalar> context;
  MotionEncoder<Scalar> motion;
  ConvGru<Scalar> gru;
  FlowHead<Scalar> head;
  CoefficientNetParams<Scalar> mfr;

  ModelParams(const ModelConfig& cfg, std::uint64_t seed);
  ModelParams(const ModelParams&) = default;

  /// Every parameter in a fixed order.
  std::vector<Parameter<Scalar>*> parameters();
  void zero_grad();
  Index parameter_count();

  template <typename To>
  ModelParams<To> cast(const ModelConfig& cfg) const;
};

/// Group name of a parameter: the prefix before the first '.', with per-frame
/// coefficient networks ("mfr1", "mfr2") folded into "mfr".
std::string parameter_group(const std::string& name);

template <typename Scalar>
FeatureMap<Scalar> extract_features(Tape<Scalar>& tape, ModelParams<Scalar>& params,
                                    const Tensor<Scalar>& image, int frame_id = 0);

/// Bilinear (corner-aligned) upsampling with the displacement values scaled
/// by the same factor.
template <typename Scalar>
Var<Scalar> upsample_flow(const Var<Scalar>& flow, int factor = 8);

template <typename Scalar>
struct PairEstimate {
  std::vector<Var<Scalar>> flows;        // per iteration, feature resolution
  std::vector<Var<Scalar>> predictions;  // per iteration, input resolution
  Var<Scalar> final_flow;
};

/// Backbone-only refinement from zero flow for the pair (a -> b).
template <typename Scalar>
PairEstimate<Scalar> estimate_flow_pair(Tape<Scalar>& tape, ModelParams<Scalar>& params,
                                        const ModelConfig& cfg, const Tensor<Scalar>& image_a,
                                        const Tensor<Scalar>& image_b, int iterations);

struct ForwardOptions {
  /// Run history estimation and feature recovery.
  bool recovery = true;
  /// Keep the recovery path but treat omega as empty.
  bool force_empty_omega = false;
};

template <typename Scalar>
struct ForwardResult {
  std::vector<Var<Scalar>> predictions;  // [2,H0,W0] per iteration
  std::vector<Var<Scalar>> flows;        // [2,H0/8,W0/8] per iteration
  std::vector<ValidityMask> baseline_masks;
  std::vector<ValidityMask> recovered_masks;
  std::vector<Var<Scalar>> history_flows;  // F_{t->t-n}, n = 1..N
  std::vector<ValidityMask> history_masks;
};

/// frames are ordered I_{t-N}, ..., I_t, I_{t+1}.
template <typename Scalar>
ForwardResult<Scalar> forward_multiframe(Tape<Scalar>& tape, ModelParams<Scalar>& params,
                                         const ModelConfig& cfg,
                                         const std::vector<Tensor<Scalar>>& frames, int iterations,
                                         const ForwardOptions& options);

template <typename Scalar>
ForwardResult<Scalar> forward_multiframe(Tape<Scalar>& tape, ModelParams<Scalar>& params,
                                         const ModelConfig& cfg,
                                         const std::vector<Tensor<Scalar>>& frames) {
  return forward_multiframe(tape, params, cfg, frames, cfg.iterations, ForwardOptions{cfg.recovery, false});
}

struct LossWeighting {
  enum class Mode { uniform, exponential };
  Mode mode = Mode::uniform;
  double gamma = 0.8;

  /// w_k for k = 1..count; exponential gives gamma^(count-k).
  std::vector<double> weights(std::size_t count) const;
};

/// sum_k w_k * mean over valid pixels of ||pred_k - gt||_2.
template <typename Scalar>
Var<Scalar> sequence_loss(const std::vector<Var<Scalar>>& predictions, const Tensor<Scalar>& gt,
                          const Mask& valid, const LossWeighting& weighting);

}  // namespace mfrflow
