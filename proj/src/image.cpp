#include "patchdet/image.hpp"

#include <algorithm>
#include <cmath>

#include "patchdet/errors.hpp"

namespace patchdet {

void validate(const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IntegrityError("image must have 1 or 3 channels");
  if (img.height <= 0 || img.width <= 0)
    throw IntegrityError("image has empty spatial extent");
  if (img.values.size() != static_cast<size_t>(img.height) * img.width * img.channels)
    throw IntegrityError("image buffer size does not match its shape");
  for (float v : img.values) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw IntegrityError("image value outside [0,1]");
  }
}

namespace {

struct Tap {
  int first;                  // first contributing source index
  std::vector<double> weight; // normalized weights
};

// Triangle (linear) filter taps for one output coordinate axis.
// Support scales with the downscale factor, which is what gives the
// antialiasing; for upscale the support stays 1 pixel.
std::vector<Tap> make_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  double scale = static_cast<double>(in_size) / out_size;
  double support = std::max(scale, 1.0);
  for (int o = 0; o < out_size; ++o) {
    double center = (o + 0.5) * scale; // in input coordinates
    int lo = static_cast<int>(std::floor(center - support + 0.5));
    int hi = static_cast<int>(std::floor(center + support + 0.5));
    lo = std::max(lo, 0);
    hi = std::min(hi, in_size);
    Tap& t = taps[o];
    t.first = lo;
    t.weight.resize(hi - lo);
    double sum = 0.0;
    for (int i = lo; i < hi; ++i) {
      double x = (i + 0.5 - center) / support;
      double w = std::max(0.0, 1.0 - std::abs(x));
      t.weight[i - lo] = w;
      sum += w;
    }
    if (sum <= 0.0) { // degenerate tap, fall back to nearest
      int n = std::clamp(static_cast<int>(center), 0, in_size - 1);
      t.first = n;
      t.weight.assign(1, 1.0);
      sum = 1.0;
    }
    for (double& w : t.weight) w /= sum;
  }
  return taps;
}

} // namespace

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ArgumentError("resize: target size must be positive");
  if (img.height == out_h && img.width == out_w) return img;

  const int C = img.channels;
  auto col_taps = make_taps(img.width, out_w);

  // Horizontal pass.
  ImageBuffer tmp(img.height, out_w, C);
  for (int r = 0; r < img.height; ++r) {
    for (int o = 0; o < out_w; ++o) {
      const Tap& t = col_taps[o];
      for (int ch = 0; ch < C; ++ch) {
        double acc = 0.0;
        for (size_t k = 0; k < t.weight.size(); ++k)
          acc += t.weight[k] * img.at(r, t.first + static_cast<int>(k), ch);
        tmp.at(r, o, ch) = static_cast<float>(acc);
      }
    }
  }

  // Vertical pass.
  auto row_taps = make_taps(img.height, out_h);
  ImageBuffer out(out_h, out_w, C);
  for (int o = 0; o < out_h; ++o) {
    const Tap& t = row_taps[o];
    for (int c = 0; c < out_w; ++c) {
      for (int ch = 0; ch < C; ++ch) {
        double acc = 0.0;
        for (size_t k = 0; k < t.weight.size(); ++k)
          acc += t.weight[k] * tmp.at(t.first + static_cast<int>(k), c, ch);
        out.at(o, c, ch) = clamp01(static_cast<float>(acc));
      }
    }
  }
  return out;
}

PixelMask resize_mask(const PixelMask& mask, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ArgumentError("resize_mask: target size must be positive");
  PixelMask out(out_h, out_w);
  double sr = static_cast<double>(mask.height) / out_h;
  double sc = static_cast<double>(mask.width) / out_w;
  for (int r = 0; r < out_h; ++r) {
    int src_r = std::min(static_cast<int>((r + 0.5) * sr), mask.height - 1);
    for (int c = 0; c < out_w; ++c) {
      int src_c = std::min(static_cast<int>((c + 0.5) * sc), mask.width - 1);
      out.at(r, c) = mask.at(src_r, src_c) >= 1 ? 1 : 0;
    }
  }
  return out;
}

std::vector<float> channel_means(const ImageBuffer& img) {
  std::vector<double> acc(img.channels, 0.0);
  size_t n = static_cast<size_t>(img.height) * img.width;
  for (size_t p = 0; p < n; ++p)
    for (int ch = 0; ch < img.channels; ++ch)
      acc[ch] += img.values[p * img.channels + ch];
  std::vector<float> means(img.channels);
  for (int ch = 0; ch < img.channels; ++ch)
    means[ch] = static_cast<float>(acc[ch] / static_cast<double>(n));
  return means;
}

} // namespace patchdet
