#pragma once

#include <filesystem>

#include "patchdet/image.hpp"

namespace patchdet {

/// Decode a PNG or JPEG file into an ImageBuffer in [0,1].
/// Grayscale files come back with channels == 1.
ImageBuffer read_image(const std::filesystem::path& path);

/// Encode as 8-bit PNG (values clipped to [0,1] then scaled to 0..255).
void write_image(const std::filesystem::path& path, const ImageBuffer& img);

/// Decode a mask PNG: any nonzero pixel becomes 1.
PixelMask read_mask(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const PixelMask& mask);

} // namespace patchdet
