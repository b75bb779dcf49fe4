#pragma once

#include "mfrflow/tensor.hpp"

namespace mfrflow {

/// Direction of a displacement field relative to the anchor frame t:
/// forward is t -> t+1, backward is t -> t-n.
enum class Direction { forward, backward };

/// Per-pixel displacement in pixels, stored as [2,H,W] with channel 0 the
/// horizontal (u) and channel 1 the vertical (v) component.
template <typename Scalar>
struct FlowField {
  Tensor<Scalar> data;
  Direction direction = Direction::forward;
  int span = 1;

  FlowField() = default;
  explicit FlowField(Tensor<Scalar> d, Direction dir = Direction::forward, int n = 1)
      : data(std::move(d)), direction(dir), span(n) {
    if (data.rank() != 3 || data.dim(0) != 2) {
      throw ShapeError("flow field must be [2,H,W], got " + to_string(data.shape()));
    }
  }

  static FlowField zeros(Index height, Index width) {
    return FlowField(Tensor<Scalar>::zeros({2, height, width}));
  }

  Index height() const { return data.dim(1); }
  Index width() const { return data.dim(2); }
  Scalar u(Index i, Index j) const { return data(0, i, j); }
  Scalar v(Index i, Index j) const { return data(1, i, j); }
};

}  // namespace mfrflow
