#pragma once

#include "mfrflow/flow.hpp"

#include <filesystem>

namespace mfrflow {

/// Middlebury .flo: "PIEH", width (i32 LE), height (i32 LE), then H*W
/// interleaved (u, v) float32 LE pairs in row-major order.
void write_flo(const std::filesystem::path& path, const FlowField<float>& flow);
FlowField<float> read_flo(const std::filesystem::path& path);

}  // namespace mfrflow
