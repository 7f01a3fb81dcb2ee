#pragma once

#include <cstdint>
#include <vector>

namespace patchdet {

/// H x W x C image with float values in [0, 1], channel-interleaved.
/// The universal pixel currency of the toolkit.
struct ImageBuffer {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values; // height * width * channels, row-major

  ImageBuffer() = default;
  ImageBuffer(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        values(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int r, int c, int ch) {
    return values[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
  float at(int r, int c, int ch) const {
    return values[(static_cast<size_t>(r) * width + c) * channels + ch];
  }

  size_t size() const { return values.size(); }
  bool same_shape(const ImageBuffer& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Binary mask paired with an image; 1 marks defective pixels.
struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values; // row-major, 0 or 1

  PixelMask() = default;
  PixelMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  std::uint8_t& at(int r, int c) { return values[static_cast<size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }

  size_t count_nonzero() const {
    size_t n = 0;
    for (auto v : values) n += (v != 0);
    return n;
  }
};

/// Throws if any value is non-finite or outside [0, 1], or the shape is
/// inconsistent with the stored vector.
void validate(const ImageBuffer& img);

/// Separable triangle-filter resample. Downscaling widens the kernel
/// support by the scale factor (antialiased); upscaling reduces to
/// standard bilinear interpolation with pixel-center alignment.
ImageBuffer resize_bilinear(const ImageBuffer& img, int out_h, int out_w);

/// Nearest-neighbor resize followed by re-binarization at 0.5.
PixelMask resize_mask(const PixelMask& mask, int out_h, int out_w);

/// Per-channel mean over all pixels.
std::vector<float> channel_means(const ImageBuffer& img);

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

} // namespace patchdet
