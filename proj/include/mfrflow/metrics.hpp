#pragma once

#include "mfrflow/flow.hpp"
#include "mfrflow/image_io.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace mfrflow {

/// A metric value; `defined` is false (and value NaN) when no pixel was valid.
struct MetricValue {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
};

/// Mean end-point error over valid pixels.
template <typename Scalar>
MetricValue epe(const FlowField<Scalar>& pred, const FlowField<Scalar>& gt, const Mask& valid);

/// Percentage of valid pixels whose end-point error exceeds both 3 px and 5%
/// of the ground-truth magnitude.
template <typename Scalar>
MetricValue fl_all(const FlowField<Scalar>& pred, const FlowField<Scalar>& gt, const Mask& valid);

/// Middlebury color-wheel visualization. Hue encodes direction, saturation the
/// magnitude relative to max_magnitude (defaults to the field's maximum);
/// zero flow is white. Magnitudes above the maximum are darkened.
template <typename Scalar>
Image8 flow_to_color(const FlowField<Scalar>& flow, std::optional<double> max_magnitude = std::nullopt);

/// Grayscale-to-hot heatmap of a non-negative [H,W] field, scaled by its max.
Image8 heatmap(const Tensor<double>& values);

/// Per-pixel end-point error [H,W].
template <typename Scalar>
Tensor<double> epe_map(const FlowField<Scalar>& pred, const FlowField<Scalar>& gt);

struct EvalRow {
  std::string sample_id;
  std::string regime;
  MetricValue epe;
  MetricValue fl;
  std::vector<double> nzr_baseline;
  std::vector<double> nzr_recovered;
};

/// Aggregate of an evaluation run; rows are per sample.
struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_epe = 0;
  double fl_all = 0;
  std::vector<double> nzr_baseline;
  std::vector<double> nzr_recovered;

  void finalize();
  /// CSV with one row per sample and a final "mean" row.
  std::string to_csv() const;
};

}  // namespace mfrflow
