#pragma once

#include <string>

#include "tonguerx/tensor.hpp"

namespace tonguerx::imageio {

/// Reads an 8-bit RGB PNG into an [H,W,3] tensor with values 0..255.
/// Grayscale, palette, and alpha variants are expanded/stripped to RGB.
Tensor read_png(const std::string& path);

/// Writes an [H,W,3] tensor as 8-bit RGB PNG; values are rounded and
/// clamped to 0..255.
void write_png(const std::string& path, const Tensor& image);

}  // namespace tonguerx::imageio
