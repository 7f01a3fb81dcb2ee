#pragma once

#include <array>
#include <vector>

#include "patchdet/image.hpp"
#include "patchdet/rng.hpp"

namespace patchdet {

enum class FillMode { source_patch, grey, mean_pixel, random_color, confetti };

/// Color jitter deltas (brightness, contrast, saturation, hue), each within
/// [-m, m], applied in the stored order.
struct JitterParams {
  std::array<float, 4> delta{0.f, 0.f, 0.f, 0.f};
  std::array<int, 4> order{0, 1, 2, 3};

  bool is_identity() const {
    return delta[0] == 0.f && delta[1] == 0.f && delta[2] == 0.f && delta[3] == 0.f;
  }
};

/// Fully resolved parameters of one cut/paste-family event. Feeding these
/// back through apply_patch_params reproduces the augmented image bit-exactly.
struct PatchParams {
  double area_ratio = 0.0;   // sampled patch area / image area
  double aspect_ratio = 1.0; // sampled width / height
  int patch_height = 0;      // resolved rectangle, before any rotation
  int patch_width = 0;
  int src_top = 0, src_left = 0; // where the patch content is cut from
  int dst_top = 0, dst_left = 0; // top-left of the (rotated) footprint
  double rotation_deg = 0.0;     // nonzero only in scar mode
  JitterParams jitter;
  FillMode fill = FillMode::source_patch;
  std::array<float, 3> fill_value{0.f, 0.f, 0.f}; // color / mean / confetti shift
};

/// Sampling ranges for the augmentation ladder. Defaults follow the
/// reference protocol; jitter_intensity and area_max are the knobs the
/// hyperparameter sweeps exercise.
struct AugmentConfig {
  double area_min = 0.02;
  double area_max = 0.15;
  double aspect_min = 0.3;
  double aspect_max = 3.3;
  double jitter_intensity = 0.1;
  int scar_width_min = 2;
  int scar_width_max = 16;
  int scar_length_min = 10;
  int scar_length_max = 25;
  double scar_rotation_deg = 45.0;
  double confetti_shift = 0.5;
  double translate_frac = 0.1;
};

struct AugmentResult {
  ImageBuffer image;
  PatchParams params;
};

/// Pixels touched by a paste (footprint) and the subset pasted at full
/// opacity (core). They differ only for rotated patches, whose bilinear
/// alpha feathers the boundary.
struct PasteResult {
  ImageBuffer image;
  PixelMask footprint;
  PixelMask core;
};

/// Cut a rectangle (area and aspect sampled from cfg) from a random
/// location, color-jitter it, and paste it at an independent random
/// location of the same image. The input is left unmodified.
AugmentResult sample_cutpaste(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg = {});

/// Scar variant: a long-thin rectangle cut from a random location, jittered,
/// rotated by a random angle, and pasted in-bounds.
AugmentResult sample_cutpaste_scar(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg = {});

enum class CutoutFill { grey, mean_pixel, random_color };

/// Cutout ladder: same rectangle geometry as sample_cutpaste but the region
/// is replaced by a constant fill.
AugmentResult sample_cutout(const ImageBuffer& x, CutoutFill fill, Rng& rng,
                            const AugmentConfig& cfg = {});

/// Scar-shaped Cutout: thin rotated rectangle of one random color.
AugmentResult sample_scar(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg = {});

/// Confetti noise: one rectangle whose pixels get a strong additive
/// per-channel color shift, clipped to [0,1].
AugmentResult sample_confetti(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg = {});

/// Replay a recorded augmentation. Throws ArgumentError when the footprint
/// does not fit inside the image.
ImageBuffer apply_patch_params(const ImageBuffer& x, const PatchParams& p);

/// Replay variant that also reports the paste footprint.
PasteResult apply_patch_params_detailed(const ImageBuffer& x, const PatchParams& p);

/// Invariance-enhancing preprocessing: random translation up to
/// +-translate_frac of the side (edge pixels replicated) followed by a
/// whole-image color jitter.
struct PreprocParams {
  int shift_rows = 0;
  int shift_cols = 0;
  JitterParams jitter;
};

PreprocParams sample_preproc_params(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg = {});
ImageBuffer apply_preproc_params(const ImageBuffer& x, const PreprocParams& p);
ImageBuffer preprocess_augment(const ImageBuffer& x, Rng& rng, const AugmentConfig& cfg = {});

/// Color jitter applied in the order recorded in p; exposed for reuse by
/// the preprocessing path and tests.
ImageBuffer apply_color_jitter(const ImageBuffer& x, const JitterParams& p);

JitterParams sample_jitter_params(double max_intensity, Rng& rng);

// --- Synthetic defects -----------------------------------------------------

enum class DefectShape { digit, square, ellipse, heart };
enum class DefectFill { random_color, natural_image };

struct SyntheticDefectSpec {
  DefectShape shape = DefectShape::square;
  DefectFill fill = DefectFill::random_color;
  double scale = 0.05;  // target mask area as a fraction of image area
  int row = 0, col = 0; // center of the shape's bounding box
  int digit = -1;       // 0..9; -1 draws one from rng
};

struct SyntheticDefect {
  ImageBuffer image;
  PixelMask mask;
};

/// Composite a shape mask (digit / square / ellipse / heart) onto x, filled
/// either with one random color or with a crop from the natural-image pool.
/// The pool may be empty unless fill == natural_image.
SyntheticDefect make_synthetic_defect(const ImageBuffer& x, const SyntheticDefectSpec& spec,
                                      const std::vector<ImageBuffer>& pool, Rng& rng);

/// 1-channel grayscale glyph for digit d (0..9); thresholding at 0.5 yields
/// the shape mask used by make_synthetic_defect.
ImageBuffer digit_bitmap(int d);

} // namespace patchdet
