#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrd/core/tensor.hpp"

namespace lrd {

/// Minimal PNG codec (8-bit, non-interlaced; zlib for the deflate stream).
/// Writer emits color type 2 (RGB) with filter 0 rows; reader additionally
/// accepts grayscale and RGBA sources.

/// pixels: (3,H,W) in [0,1]; values are rounded to 8-bit.
void write_png_rgb8(const std::string& path, const Tensor<float>& pixels);

/// Returns (3,H,W) float in [0,1].
Tensor<float> read_png_rgb8(const std::string& path);

}  // namespace lrd
