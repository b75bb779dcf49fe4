#pragma once

#include "mfrflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace mfrflow {

/// 8-bit RGB image [H,W,3] or grayscale image [H,W].
using Image8 = Tensor<std::uint8_t>;

void write_ppm(const std::filesystem::path& path, const Image8& rgb);
Image8 read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image8& gray);
Image8 read_pgm(const std::filesystem::path& path);

/// [3,H,W] in [0,1] -> [H,W,3] bytes, rounding to nearest.
template <typename Scalar>
Image8 to_rgb8(const Tensor<Scalar>& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) throw ShapeError("to_rgb8: frame must be [3,H,W]");
  const Index h = frame.dim(1), w = frame.dim(2);
  Image8 out({h, w, 3});
  for (Index c = 0; c < 3; ++c) {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const double v = std::clamp(static_cast<double>(frame(c, i, j)), 0.0, 1.0);
        out(i, j, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> from_rgb8(const Image8& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("from_rgb8: image must be [H,W,3]");
  const Index h = rgb.dim(0), w = rgb.dim(1);
  Tensor<Scalar> out({3, h, w});
  for (Index c = 0; c < 3; ++c) {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) out(c, i, j) = static_cast<Scalar>(rgb(i, j, c)) / Scalar(255);
    }
  }
  return out;
}

/// Mask [H,W] <-> gray image with 0 / 255.
Image8 mask_to_gray(const Mask& m);
Mask gray_to_mask(const Image8& g);

}  // namespace mfrflow
