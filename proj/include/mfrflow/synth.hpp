#pragma once

#include "mfrflow/flow.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mfrflow {

enum class Regime { small, large, occluding };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct Sprite {
  enum class Shape { rectangle, disc };
  Shape shape = Shape::rectangle;
  std::uint64_t texture_seed = 0;
  /// Center at frame index 0 (the oldest frame), in pixels.
  double x = 0, y = 0;
  /// Half extents; a disc uses half_w as its radius.
  double half_w = 8, half_h = 8;
  double vx = 0, vy = 0;
  /// Higher layers are drawn on top.
  int layer = 1;
};

/// A scene of textured sprites over an infinite textured background, all
/// moving at constant velocity. Frame k of the sequence shows every layer
/// translated by k times its velocity; the anchor frame t has index N.
struct SceneSpec {
  Index height = 64;
  Index width = 64;
  std::uint64_t background_seed = 0;
  double background_vx = 0, background_vy = 0;
  std::vector<Sprite> sprites;
  int history_frames = 2;
  Regime regime = Regime::small;

  void validate() const;
  int length() const { return history_frames + 2; }
  int anchor() const { return history_frames; }
};

struct SampleSequence {
  std::string id;
  Regime regime = Regime::small;
  /// I_{t-N}, ..., I_t, I_{t+1}; [3,H,W] in [0,1], quantized to 1/255.
  std::vector<Tensor<double>> frames;
  FlowField<double> flow;                    // F_{t->t+1}
  std::vector<FlowField<double>> history_flows;  // F_{t->t-n}, n = 1..N
  Mask occlusion;    // frame-t pixels without a correspondent in t+1
  Mask valid;        // pixels with defined ground truth
  Mask sprite_mask;  // frame-t pixels covered by a sprite
};

/// Topmost layer index at point (x, y) of frame k: -1 for background,
/// otherwise the sprite index.
int top_layer(const SceneSpec& spec, double x, double y, int frame);

/// F_{k -> k+delta} at pixel centers, from each pixel's topmost layer in frame k.
FlowField<double> analytic_flow(const SceneSpec& spec, int frame, int delta);

/// Renders frame k with 4x4 supersampling.
Tensor<double> render_frame(const SceneSpec& spec, int frame);

SampleSequence generate_sequence(const SceneSpec& spec, const std::string& id = "s00000");

/// Random scene of the given regime; sprites are visible in the anchor frame.
SceneSpec random_scene(Regime regime, std::uint64_t seed, Index height = 64, Index width = 64,
                       int history_frames = 2);

using RegimeMix = std::vector<std::pair<Regime, double>>;

/// "small:0.5,large:0.5"; weights must be positive.
RegimeMix parse_regime_mix(const std::string& text);

/// Regime counts by largest remainder, ties to the earlier entry.
std::vector<int> regime_counts(const RegimeMix& mix, int count);

/// Sample k uses scene seed derive_seed(seed, k); regime tags follow
/// regime_counts in a seeded order.
std::vector<SampleSequence> make_dataset(const RegimeMix& mix, int count, std::uint64_t seed,
                                         Index height = 64, Index width = 64, int history_frames = 2);

/// FNV-1a over the dataset's frames, flows and masks.
std::uint64_t dataset_checksum(const std::vector<SampleSequence>& samples);

/// Layout: manifest.txt plus one directory per sample holding frame_k.ppm,
/// flow.flo, flow_hist_n.flo, occlusion.pgm, valid.pgm and sprite_mask.pgm.
void write_dataset(const std::filesystem::path& dir, const std::vector<SampleSequence>& samples);
std::vector<SampleSequence> read_dataset(const std::filesystem::path& dir);

/// Majority pooling of an [H,W] mask by `factor`; ties count as set.
Mask downsample_mask(const Mask& mask, Index factor);

/// Block mean of a [2,H,W] flow divided by `factor` (feature-grid units).
template <typename Scalar>
Tensor<Scalar> downsample_flow(const Tensor<Scalar>& flow, Index factor);

}  // namespace mfrflow
