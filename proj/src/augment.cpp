#include "patchdet/augment.hpp"

#include <algorithm>
#include <cmath>

#include "patchdet/errors.hpp"

namespace patchdet {

namespace {

constexpr int kMinImageSide = 16;

float luma(const ImageBuffer& img, int r, int c) {
  if (img.channels == 1) return img.at(r, c, 0);
  return 0.299f * img.at(r, c, 0) + 0.587f * img.at(r, c, 1) + 0.114f * img.at(r, c, 2);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float maxc = std::max({r, g, b});
  float minc = std::min({r, g, b});
  v = maxc;
  float delta = maxc - minc;
  s = maxc > 0.f ? delta / maxc : 0.f;
  if (delta <= 0.f) {
    h = 0.f;
    return;
  }
  if (maxc == r)
    h = (g - b) / delta;
  else if (maxc == g)
    h = 2.f + (b - r) / delta;
  else
    h = 4.f + (r - g) / delta;
  h /= 6.f;
  if (h < 0.f) h += 1.f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h); // wraparound
  float hh = h * 6.f;
  int i = static_cast<int>(hh) % 6;
  float f = hh - std::floor(hh);
  float p = v * (1.f - s);
  float q = v * (1.f - s * f);
  float t = v * (1.f - s * (1.f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void jitter_brightness(ImageBuffer& img, float delta) {
  float factor = 1.f + delta;
  for (float& v : img.values) v = clamp01(v * factor);
}

void jitter_contrast(ImageBuffer& img, float delta) {
  const size_t n = static_cast<size_t>(img.height) * img.width;
  double acc = 0.0;
  if (img.channels == 3) {
    const float* p = img.values.data();
    for (size_t i = 0; i < n; ++i, p += 3)
      acc += 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
  } else {
    for (float v : img.values) acc += v;
  }
  float mean = static_cast<float>(acc / static_cast<double>(n));
  float factor = 1.f + delta;
  for (float& v : img.values) v = clamp01(mean + factor * (v - mean));
}

void jitter_saturation(ImageBuffer& img, float delta) {
  if (img.channels != 3) return;
  float factor = 1.f + delta;
  const size_t n = static_cast<size_t>(img.height) * img.width;
  float* p = img.values.data();
  for (size_t i = 0; i < n; ++i, p += 3) {
    float g = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    p[0] = clamp01(g + factor * (p[0] - g));
    p[1] = clamp01(g + factor * (p[1] - g));
    p[2] = clamp01(g + factor * (p[2] - g));
  }
}

void jitter_hue(ImageBuffer& img, float delta) {
  if (img.channels != 3) return;
  const size_t n = static_cast<size_t>(img.height) * img.width;
  float* p = img.values.data();
  for (size_t i = 0; i < n; ++i, p += 3) {
    float h, s, v;
    rgb_to_hsv(p[0], p[1], p[2], h, s, v);
    float rr, gg, bb;
    hsv_to_rgb(h + delta, s, v, rr, gg, bb);
    p[0] = clamp01(rr);
    p[1] = clamp01(gg);
    p[2] = clamp01(bb);
  }
}

struct Rect {
  double area_ratio;
  double aspect_ratio;
  int height;
  int width;
};

// Area uniform in (area_min, area_max); aspect log-uniform over
// (aspect_min, aspect_max) with the exact value 1 rejected, matching the
// two-sided interval the protocol prescribes.
Rect sample_rect(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg) {
  Rect rect;
  rect.area_ratio = rng.uniform_open(cfg.area_min, cfg.area_max);
  do {
    rect.aspect_ratio = std::exp(rng.uniform_open(std::log(cfg.aspect_min), std::log(cfg.aspect_max)));
  } while (rect.aspect_ratio == 1.0 || rect.aspect_ratio <= cfg.aspect_min ||
           rect.aspect_ratio >= cfg.aspect_max);
  double target = rect.area_ratio * x.height * x.width;
  rect.width = std::clamp(static_cast<int>(std::lround(std::sqrt(target * rect.aspect_ratio))), 1,
                          x.width - 1);
  rect.height = std::clamp(static_cast<int>(std::lround(std::sqrt(target / rect.aspect_ratio))), 1,
                           x.height - 1);
  return rect;
}

void require_min_size(const ImageBuffer& x) {
  if (x.height < kMinImageSide || x.width < kMinImageSide)
    throw ArgumentError("image too small to host an augmentation patch");
}

// Extent of a height x width rectangle rotated by deg.
void rotated_extent(int height, int width, double deg, int& out_h, int& out_w) {
  double rad = deg * M_PI / 180.0;
  double c = std::abs(std::cos(rad)), s = std::abs(std::sin(rad));
  out_h = static_cast<int>(std::ceil(height * c + width * s - 1e-9));
  out_w = static_cast<int>(std::ceil(width * c + height * s - 1e-9));
}

// Composite `patch` rotated by deg onto img with its rotated bounding box
// anchored at (dst_top, dst_left). Bilinear resampling with an implicit
// all-ones alpha channel; partially covered border pixels blend.
void paste_rotated(ImageBuffer& img, const ImageBuffer& patch, double deg, int dst_top,
                   int dst_left, PixelMask& footprint, PixelMask& core) {
  int bh, bw;
  rotated_extent(patch.height, patch.width, deg, bh, bw);
  double rad = deg * M_PI / 180.0;
  double cos_t = std::cos(rad), sin_t = std::sin(rad);
  double bcy = bh / 2.0, bcx = bw / 2.0;
  double pcy = patch.height / 2.0, pcx = patch.width / 2.0;
  for (int r = 0; r < bh; ++r) {
    for (int c = 0; c < bw; ++c) {
      // Inverse-rotate the bbox pixel center into patch coordinates.
      double dy = (r + 0.5) - bcy, dx = (c + 0.5) - bcx;
      double py = cos_t * dy + sin_t * dx + pcy - 0.5;
      double px = -sin_t * dy + cos_t * dx + pcx - 0.5;
      int r0 = static_cast<int>(std::floor(py)), c0 = static_cast<int>(std::floor(px));
      double fy = py - r0, fx = px - c0;
      double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
      int rr[4] = {r0, r0, r0 + 1, r0 + 1};
      int cc[4] = {c0, c0 + 1, c0, c0 + 1};
      double alpha = 0.0;
      double acc[3] = {0.0, 0.0, 0.0};
      for (int k = 0; k < 4; ++k) {
        if (rr[k] < 0 || rr[k] >= patch.height || cc[k] < 0 || cc[k] >= patch.width) continue;
        alpha += w[k];
        for (int ch = 0; ch < patch.channels; ++ch)
          acc[ch] += w[k] * patch.at(rr[k], cc[k], ch);
      }
      if (alpha <= 1e-9) continue;
      int ir = dst_top + r, ic = dst_left + c;
      for (int ch = 0; ch < img.channels; ++ch) {
        double v = acc[std::min(ch, patch.channels - 1)] + (1.0 - alpha) * img.at(ir, ic, ch);
        img.at(ir, ic, ch) = clamp01(static_cast<float>(v));
      }
      footprint.at(ir, ic) = 1;
      if (alpha >= 0.999) core.at(ir, ic) = 1;
    }
  }
}

ImageBuffer constant_patch(int h, int w, int channels, const std::array<float, 3>& color) {
  ImageBuffer patch(h, w, channels);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch) patch.at(r, c, ch) = color[ch];
  return patch;
}

} // namespace

JitterParams sample_jitter_params(double max_intensity, Rng& rng) {
  JitterParams p;
  for (int i = 0; i < 4; ++i)
    p.delta[i] = static_cast<float>(rng.uniform(-max_intensity, max_intensity));
  // Fisher-Yates permutation of the application order.
  p.order = {0, 1, 2, 3};
  for (int i = 3; i > 0; --i)
    std::swap(p.order[i], p.order[rng.uniform_int(0, i)]);
  return p;
}

ImageBuffer apply_color_jitter(const ImageBuffer& x, const JitterParams& p) {
  ImageBuffer out = x;
  if (p.is_identity()) return out;
  for (int idx : p.order) {
    switch (idx) {
      case 0: jitter_brightness(out, p.delta[0]); break;
      case 1: jitter_contrast(out, p.delta[1]); break;
      case 2: jitter_saturation(out, p.delta[2]); break;
      case 3: jitter_hue(out, p.delta[3]); break;
      default: throw ArgumentError("jitter order index out of range");
    }
  }
  return out;
}

PasteResult apply_patch_params_detailed(const ImageBuffer& x, const PatchParams& p) {
  if (p.patch_height <= 0 || p.patch_width <= 0)
    throw ArgumentError("patch has empty extent");

  // Resolve the patch content.
  ImageBuffer patch;
  switch (p.fill) {
    case FillMode::source_patch:
      break; // handled below
    case FillMode::grey:
    case FillMode::mean_pixel:
    case FillMode::random_color:
      patch = constant_patch(p.patch_height, p.patch_width, x.channels, p.fill_value);
      break;
    case FillMode::confetti: {
      if (p.src_top < 0 || p.src_left < 0 || p.src_top + p.patch_height > x.height ||
          p.src_left + p.patch_width > x.width)
        throw ArgumentError("confetti source rectangle outside image");
      patch = ImageBuffer(p.patch_height, p.patch_width, x.channels);
      for (int r = 0; r < p.patch_height; ++r)
        for (int c = 0; c < p.patch_width; ++c)
          for (int ch = 0; ch < x.channels; ++ch)
            patch.at(r, c, ch) =
                clamp01(x.at(p.src_top + r, p.src_left + c, ch) + p.fill_value[ch]);
      break;
    }
  }
  if (p.fill == FillMode::source_patch) {
    if (p.src_top < 0 || p.src_left < 0 || p.src_top + p.patch_height > x.height ||
        p.src_left + p.patch_width > x.width)
      throw ArgumentError("source rectangle outside image");
    patch = ImageBuffer(p.patch_height, p.patch_width, x.channels);
    for (int r = 0; r < p.patch_height; ++r)
      for (int c = 0; c < p.patch_width; ++c)
        for (int ch = 0; ch < x.channels; ++ch)
          patch.at(r, c, ch) = x.at(p.src_top + r, p.src_left + c, ch);
    patch = apply_color_jitter(patch, p.jitter);
  }

  PasteResult result{x, PixelMask(x.height, x.width), PixelMask(x.height, x.width)};
  if (p.rotation_deg == 0.0) {
    if (p.dst_top < 0 || p.dst_left < 0 || p.dst_top + p.patch_height > x.height ||
        p.dst_left + p.patch_width > x.width)
      throw ArgumentError("destination rectangle outside image");
    for (int r = 0; r < p.patch_height; ++r)
      for (int c = 0; c < p.patch_width; ++c) {
        for (int ch = 0; ch < x.channels; ++ch)
          result.image.at(p.dst_top + r, p.dst_left + c, ch) = patch.at(r, c, ch);
        result.footprint.at(p.dst_top + r, p.dst_left + c) = 1;
        result.core.at(p.dst_top + r, p.dst_left + c) = 1;
      }
  } else {
    int bh, bw;
    rotated_extent(p.patch_height, p.patch_width, p.rotation_deg, bh, bw);
    if (p.dst_top < 0 || p.dst_left < 0 || p.dst_top + bh > x.height || p.dst_left + bw > x.width)
      throw ArgumentError("rotated destination outside image");
    paste_rotated(result.image, patch, p.rotation_deg, p.dst_top, p.dst_left, result.footprint,
                  result.core);
  }
  return result;
}

ImageBuffer apply_patch_params(const ImageBuffer& x, const PatchParams& p) {
  return apply_patch_params_detailed(x, p).image;
}

AugmentResult sample_cutpaste(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg) {
  require_min_size(x);
  Rect rect = sample_rect(x, rng, cfg);
  PatchParams p;
  p.area_ratio = rect.area_ratio;
  p.aspect_ratio = rect.aspect_ratio;
  p.patch_height = rect.height;
  p.patch_width = rect.width;
  p.src_top = static_cast<int>(rng.uniform_int(0, x.height - rect.height));
  p.src_left = static_cast<int>(rng.uniform_int(0, x.width - rect.width));
  p.dst_top = static_cast<int>(rng.uniform_int(0, x.height - rect.height));
  p.dst_left = static_cast<int>(rng.uniform_int(0, x.width - rect.width));
  p.jitter = sample_jitter_params(cfg.jitter_intensity, rng);
  p.fill = FillMode::source_patch;
  return {apply_patch_params(x, p), p};
}

AugmentResult sample_cutpaste_scar(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg) {
  require_min_size(x);
  int width, length;
  do {
    width = static_cast<int>(rng.uniform_int(cfg.scar_width_min, cfg.scar_width_max));
    length = static_cast<int>(rng.uniform_int(cfg.scar_length_min, cfg.scar_length_max));
  } while (width > length);
  double rot = rng.uniform_open(-cfg.scar_rotation_deg, cfg.scar_rotation_deg);

  // Shrink the scar until its rotated footprint fits the image.
  int bh, bw;
  rotated_extent(width, length, rot, bh, bw);
  while ((bh > x.height || bw > x.width) && length > cfg.scar_length_min) {
    length = std::max(cfg.scar_length_min, static_cast<int>(std::floor(length * 0.9)));
    rotated_extent(width, length, rot, bh, bw);
  }
  if (bh > x.height || bw > x.width || width > x.height || length > x.width)
    throw ArgumentError("image too small for a scar patch");

  PatchParams p;
  p.patch_height = width;
  p.patch_width = length;
  p.area_ratio = static_cast<double>(width) * length / (static_cast<double>(x.height) * x.width);
  p.aspect_ratio = static_cast<double>(length) / width;
  p.rotation_deg = rot;
  p.src_top = static_cast<int>(rng.uniform_int(0, x.height - width));
  p.src_left = static_cast<int>(rng.uniform_int(0, x.width - length));
  p.dst_top = static_cast<int>(rng.uniform_int(0, x.height - bh));
  p.dst_left = static_cast<int>(rng.uniform_int(0, x.width - bw));
  p.jitter = sample_jitter_params(cfg.jitter_intensity, rng);
  p.fill = FillMode::source_patch;
  return {apply_patch_params(x, p), p};
}

AugmentResult sample_cutout(const ImageBuffer& x, CutoutFill fill, Rng& rng,
                            const AugmentConfig& cfg) {
  require_min_size(x);
  Rect rect = sample_rect(x, rng, cfg);
  PatchParams p;
  p.area_ratio = rect.area_ratio;
  p.aspect_ratio = rect.aspect_ratio;
  p.patch_height = rect.height;
  p.patch_width = rect.width;
  p.dst_top = static_cast<int>(rng.uniform_int(0, x.height - rect.height));
  p.dst_left = static_cast<int>(rng.uniform_int(0, x.width - rect.width));
  p.src_top = p.dst_top;
  p.src_left = p.dst_left;
  switch (fill) {
    case CutoutFill::grey:
      p.fill = FillMode::grey;
      p.fill_value = {0.5f, 0.5f, 0.5f};
      break;
    case CutoutFill::mean_pixel: {
      p.fill = FillMode::mean_pixel;
      auto means = channel_means(x);
      for (int ch = 0; ch < 3; ++ch)
        p.fill_value[ch] = means[std::min<size_t>(ch, means.size() - 1)];
      break;
    }
    case CutoutFill::random_color:
      p.fill = FillMode::random_color;
      for (int ch = 0; ch < 3; ++ch) p.fill_value[ch] = static_cast<float>(rng.uniform());
      break;
  }
  return {apply_patch_params(x, p), p};
}

AugmentResult sample_scar(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg) {
  require_min_size(x);
  int width, length;
  do {
    width = static_cast<int>(rng.uniform_int(cfg.scar_width_min, cfg.scar_width_max));
    length = static_cast<int>(rng.uniform_int(cfg.scar_length_min, cfg.scar_length_max));
  } while (width > length);
  double rot = rng.uniform_open(-cfg.scar_rotation_deg, cfg.scar_rotation_deg);
  int bh, bw;
  rotated_extent(width, length, rot, bh, bw);
  while ((bh > x.height || bw > x.width) && length > cfg.scar_length_min) {
    length = std::max(cfg.scar_length_min, static_cast<int>(std::floor(length * 0.9)));
    rotated_extent(width, length, rot, bh, bw);
  }
  if (bh > x.height || bw > x.width)
    throw ArgumentError("image too small for a scar patch");

  PatchParams p;
  p.patch_height = width;
  p.patch_width = length;
  p.area_ratio = static_cast<double>(width) * length / (static_cast<double>(x.height) * x.width);
  p.aspect_ratio = static_cast<double>(length) / width;
  p.rotation_deg = rot;
  p.fill = FillMode::random_color;
  for (int ch = 0; ch < 3; ++ch) p.fill_value[ch] = static_cast<float>(rng.uniform());
  p.dst_top = static_cast<int>(rng.uniform_int(0, x.height - bh));
  p.dst_left = static_cast<int>(rng.uniform_int(0, x.width - bw));
  p.src_top = p.dst_top;
  p.src_left = p.dst_left;
  return {apply_patch_params(x, p), p};
}

AugmentResult sample_confetti(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg) {
  require_min_size(x);
  Rect rect = sample_rect(x, rng, cfg);
  PatchParams p;
  p.area_ratio = rect.area_ratio;
  p.aspect_ratio = rect.aspect_ratio;
  p.patch_height = rect.height;
  p.patch_width = rect.width;
  p.dst_top = static_cast<int>(rng.uniform_int(0, x.height - rect.height));
  p.dst_left = static_cast<int>(rng.uniform_int(0, x.width - rect.width));
  p.src_top = p.dst_top;
  p.src_left = p.dst_left;
  p.fill = FillMode::confetti;
  for (int ch = 0; ch < 3; ++ch)
    p.fill_value[ch] = static_cast<float>(rng.uniform(-cfg.confetti_shift, cfg.confetti_shift));
  return {apply_patch_params(x, p), p};
}

PreprocParams sample_preproc_params(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg) {
  PreprocParams p;
  int max_r = static_cast<int>(std::floor(cfg.translate_frac * x.height));
  int max_c = static_cast<int>(std::floor(cfg.translate_frac * x.width));
  p.shift_rows = static_cast<int>(rng.uniform_int(-max_r, max_r));
  p.shift_cols = static_cast<int>(rng.uniform_int(-max_c, max_c));
  p.jitter = sample_jitter_params(cfg.jitter_intensity, rng);
  return p;
}

ImageBuffer apply_preproc_params(const ImageBuffer& x, const PreprocParams& p) {
  ImageBuffer shifted = x;
  if (p.shift_rows != 0 || p.shift_cols != 0) {
    for (int r = 0; r < x.height; ++r) {
      int sr = std::clamp(r - p.shift_rows, 0, x.height - 1);
      for (int c = 0; c < x.width; ++c) {
        int sc = std::clamp(c - p.shift_cols, 0, x.width - 1);
        for (int ch = 0; ch < x.channels; ++ch) shifted.at(r, c, ch) = x.at(sr, sc, ch);
      }
    }
  }
  return apply_color_jitter(shifted, p.jitter);
}

ImageBuffer preprocess_augment(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg) {
  return apply_preproc_params(x, sample_preproc_params(x, rng, cfg));
}

// --- Synthetic defects -----------------------------------------------------

namespace {

// 5x7 dot-matrix digit glyphs.
constexpr const char* kDigitRows[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
};

// Heart implicit curve (x^2+y^2-1)^3 <= x^2 y^3, y up. Bounding box and
// enclosed area of the unit-scale curve, precomputed on a fine grid.
constexpr double kHeartHalfWidth = 1.1385;
constexpr double kHeartYMin = -0.99922;
constexpr double kHeartYMax = 1.23653;
constexpr double kHeartArea = 3.66195;

PixelMask rasterize_shape(DefectShape shape, int digit, double target_area, Rng& rng,
                          int& bbox_h, int& bbox_w) {
  switch (shape) {
    case DefectShape::square: {
      int side = std::max(1, static_cast<int>(std::lround(std::sqrt(target_area))));
      bbox_h = bbox_w = side;
      return PixelMask(side, side, 1);
    }
    case DefectShape::ellipse: {
      double aspect = rng.uniform(0.6, 1.6);
      double r = std::sqrt(target_area / M_PI);
      double semi_x = r * std::sqrt(aspect);
      double semi_y = r / std::sqrt(aspect);
      bbox_h = std::max(1, static_cast<int>(std::ceil(2 * semi_y)));
      bbox_w = std::max(1, static_cast<int>(std::ceil(2 * semi_x)));
      PixelMask mask(bbox_h, bbox_w);
      for (int rr = 0; rr < bbox_h; ++rr)
        for (int cc = 0; cc < bbox_w; ++cc) {
          double dy = (rr + 0.5 - bbox_h / 2.0) / semi_y;
          double dx = (cc + 0.5 - bbox_w / 2.0) / semi_x;
          if (dx * dx + dy * dy <= 1.0) mask.at(rr, cc) = 1;
        }
      return mask;
    }
    case DefectShape::heart: {
      double s = std::sqrt(target_area / kHeartArea);
      bbox_w = std::max(1, static_cast<int>(std::ceil(2 * kHeartHalfWidth * s)));
      bbox_h = std::max(1, static_cast<int>(std::ceil((kHeartYMax - kHeartYMin) * s)));
      PixelMask mask(bbox_h, bbox_w);
      for (int rr = 0; rr < bbox_h; ++rr)
        for (int cc = 0; cc < bbox_w; ++cc) {
          double x = (cc + 0.5 - bbox_w / 2.0) / s;
          double y = kHeartYMax - (rr + 0.5) / s;
          double q = x * x + y * y - 1.0;
          if (q * q * q - x * x * y * y * y <= 0.0) mask.at(rr, cc) = 1;
        }
      return mask;
    }
    case DefectShape::digit: {
      int d = digit >= 0 ? digit : static_cast<int>(rng.uniform_int(0, 9));
      ImageBuffer glyph = digit_bitmap(d);
      double coverage = 0.0;
      for (float v : glyph.values) coverage += v;
      coverage /= static_cast<double>(glyph.values.size());
      double glyph_aspect = static_cast<double>(glyph.width) / glyph.height;
      bbox_h = std::max(2, static_cast<int>(std::lround(std::sqrt(target_area / (coverage * glyph_aspect)))));
      bbox_w = std::max(2, static_cast<int>(std::lround(bbox_h * glyph_aspect)));
      ImageBuffer scaled = resize_bilinear(glyph, bbox_h, bbox_w);
      PixelMask mask(bbox_h, bbox_w);
      for (int rr = 0; rr < bbox_h; ++rr)
        for (int cc = 0; cc < bbox_w; ++cc)
          if (scaled.at(rr, cc, 0) >= 0.5f) mask.at(rr, cc) = 1;
      return mask;
    }
  }
  throw ArgumentError("unknown defect shape");
}

} // namespace

ImageBuffer digit_bitmap(int d) {
  if (d < 0 || d > 9) throw ArgumentError("digit must be 0..9");
  ImageBuffer glyph(7, 5, 1);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 5; ++c) glyph.at(r, c, 0) = kDigitRows[d][r][c] == '1' ? 1.0f : 0.0f;
  return glyph;
}

SyntheticDefect make_synthetic_defect(const ImageBuffer& x, const SyntheticDefectSpec& spec,
                                      const std::vector<ImageBuffer>& pool, Rng& rng) {
  if (spec.scale <= 0.0 || spec.scale >= 1.0)
    throw ArgumentError("defect scale must be in (0,1)");
  if (spec.fill == DefectFill::natural_image && pool.empty())
    throw ConfigError("natural_image fill requires a non-empty image pool");

  double target_area = spec.scale * x.height * x.width;
  int bbox_h = 0, bbox_w = 0;
  PixelMask shape = rasterize_shape(spec.shape, spec.digit, target_area, rng, bbox_h, bbox_w);

  int top = spec.row - bbox_h / 2;
  int left = spec.col - bbox_w / 2;
  if (top < 0 || left < 0 || top + bbox_h > x.height || left + bbox_w > x.width)
    throw ArgumentError("defect shape does not fit inside the image");

  // Resolve fill pixels for the bounding box.
  ImageBuffer fill_pixels;
  if (spec.fill == DefectFill::random_color) {
    std::array<float, 3> color{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                               static_cast<float>(rng.uniform())};
    fill_pixels = ImageBuffer(bbox_h, bbox_w, x.channels);
    for (int r = 0; r < bbox_h; ++r)
      for (int c = 0; c < bbox_w; ++c)
        for (int ch = 0; ch < x.channels; ++ch) fill_pixels.at(r, c, ch) = color[ch];
  } else {
    const ImageBuffer& src = pool[rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1)];
    ImageBuffer base = src;
    if (base.height < bbox_h || base.width < bbox_w)
      base = resize_bilinear(base, std::max(base.height, bbox_h), std::max(base.width, bbox_w));
    int st = static_cast<int>(rng.uniform_int(0, base.height - bbox_h));
    int sl = static_cast<int>(rng.uniform_int(0, base.width - bbox_w));
    fill_pixels = ImageBuffer(bbox_h, bbox_w, x.channels);
    for (int r = 0; r < bbox_h; ++r)
      for (int c = 0; c < bbox_w; ++c)
        for (int ch = 0; ch < x.channels; ++ch)
          fill_pixels.at(r, c, ch) = base.at(st + r, sl + c, std::min(ch, base.channels - 1));
  }

  SyntheticDefect result{x, PixelMask(x.height, x.width)};
  for (int r = 0; r < bbox_h; ++r)
    for (int c = 0; c < bbox_w; ++c) {
      if (!shape.at(r, c)) continue;
      for (int ch = 0; ch < x.channels; ++ch)
        result.image.at(top + r, left + c, ch) = fill_pixels.at(r, c, ch);
      result.mask.at(top + r, left + c) = 1;
    }
  return result;
}

} // namespace patchdet
