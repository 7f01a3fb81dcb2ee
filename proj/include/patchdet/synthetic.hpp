#pragma once

#include <filesystem>
#include <vector>

#include "patchdet/augment.hpp"
#include "patchdet/image.hpp"
#include "patchdet/rng.hpp"

namespace patchdet {

/// Parameters of one procedural texture family: oriented plaid with a fixed
/// palette. Individual images vary in phase, brightness and pixel noise, so
/// the normal set is coherent but not degenerate.
struct TextureFamily {
  double angle = 0.0;
  double freq_u = 4.0;
  double freq_v = 2.5;
  std::array<float, 3> base_color{0.4f, 0.35f, 0.3f};
  std::array<float, 3> alt_color{0.7f, 0.65f, 0.55f};
  double noise_amp = 0.03;
};

TextureFamily sample_texture_family(Rng& rng);
ImageBuffer make_texture_image(int size, const TextureFamily& family, Rng& rng);

struct SyntheticDatasetConfig {
  int image_size = 64;
  int n_train = 200;
  int n_test_normal = 40;
  int n_test_defect = 40;
  double defect_scale_min = 0.03;
  double defect_scale_max = 0.08;
  std::vector<DefectShape> shapes{DefectShape::square, DefectShape::ellipse};
  bool mix_natural_fill = true; // half the defects use crops of held-out normals
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  std::vector<ImageBuffer> train;
  std::vector<ImageBuffer> test_images;
  std::vector<int> test_labels; // 1 = defective
  std::vector<PixelMask> test_masks;
};

/// Deterministic under cfg.seed. Defective test images are held-out normals
/// with make_synthetic_defect applied; natural fills crop from a separate
/// pool of normals so the fill statistics match the training domain.
SyntheticDataset generate_synthetic_dataset(const SyntheticDatasetConfig& cfg);

/// Write the MVTec-style tree:
///   <root>/<category>/train/good/*.png
///   <root>/<category>/test/{good,defect}/*.png
///   <root>/<category>/ground_truth/defect/*_mask.png
void write_synthetic_dataset(const std::filesystem::path& root, const std::string& category,
                             const SyntheticDataset& dataset);

} // namespace patchdet
