#pragma once

#include <filesystem>

#include "deqmd/image.hpp"

namespace deqmd {

// Supported formats, chosen by extension:
//   .deqf       "DEQF" magic, u32 height, u32 width, u32 channels, then
//               little-endian f64 pixels (planar). Lossless.
//   .pgm/.ppm   binary netpbm (P5/P6), 8-bit.
//   .png        8-bit gray/RGB via libpng.
// Display formats clamp to [0,1] and quantize to 8 bits on save; loads are
// normalized to [0,1].

/// `channels` = 0 keeps the file's channel count; 1 converts RGB to luminance.
Image load_image(const std::filesystem::path& path, int channels = 0);

void save_image(const Image& x, const std::filesystem::path& path);

}  // namespace deqmd
