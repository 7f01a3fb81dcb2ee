#include "patchdet/synthetic.hpp"

#include <cmath>

#include "patchdet/errors.hpp"
#include "patchdet/imageio.hpp"

namespace patchdet {

TextureFamily sample_texture_family(Rng& rng) {
  TextureFamily f;
  f.angle = rng.uniform(0.0, M_PI);
  f.freq_u = rng.uniform(3.0, 6.0);
  f.freq_v = rng.uniform(1.5, 4.0);
  for (int ch = 0; ch < 3; ++ch) {
    f.base_color[ch] = static_cast<float>(rng.uniform(0.2, 0.5));
    f.alt_color[ch] = static_cast<float>(f.base_color[ch] + rng.uniform(0.2, 0.4));
  }
  f.noise_amp = rng.uniform(0.02, 0.05);
  return f;
}

ImageBuffer make_texture_image(int size, const TextureFamily& family, Rng& rng) {
  const double phase_u = rng.uniform(0.0, 2.0 * M_PI);
  const double phase_v = rng.uniform(0.0, 2.0 * M_PI);
  const double brightness = rng.uniform(0.95, 1.05);
  const double ca = std::cos(family.angle), sa = std::sin(family.angle);

  ImageBuffer img(size, size, 3);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double u = (c * ca + r * sa) / size;
      double v = (-c * sa + r * ca) / size;
      double t = 0.5 + 0.25 * std::sin(2.0 * M_PI * family.freq_u * u + phase_u) +
                 0.25 * std::sin(2.0 * M_PI * family.freq_v * v + phase_v);
      for (int ch = 0; ch < 3; ++ch) {
        double base = family.base_color[ch] * (1.0 - t) + family.alt_color[ch] * t;
        double noise = rng.uniform(-family.noise_amp, family.noise_amp);
        img.at(r, c, ch) = clamp01(static_cast<float>(brightness * base + noise));
      }
    }
  return img;
}

SyntheticDataset generate_synthetic_dataset(const SyntheticDatasetConfig& cfg) {
  if (cfg.image_size < 16) throw ArgumentError("synthetic image size must be >= 16");
  if (cfg.n_train < 1 || cfg.n_test_normal < 1 || cfg.n_test_defect < 1)
    throw ArgumentError("synthetic dataset sizes must be positive");
  if (cfg.shapes.empty()) throw ArgumentError("need at least one defect shape");

  Rng family_rng = Rng::from_root(cfg.seed, "texture-family");
  Rng image_rng = Rng::from_root(cfg.seed, "texture-images");
  Rng defect_rng = Rng::from_root(cfg.seed, "defects");
  TextureFamily family = sample_texture_family(family_rng);

  SyntheticDataset out;
  for (int i = 0; i < cfg.n_train; ++i)
    out.train.push_back(make_texture_image(cfg.image_size, family, image_rng));
  for (int i = 0; i < cfg.n_test_normal; ++i) {
    out.test_images.push_back(make_texture_image(cfg.image_size, family, image_rng));
    out.test_labels.push_back(0);
    out.test_masks.push_back(PixelMask(cfg.image_size, cfg.image_size));
  }

  // Fill pool: fresh normals never shown to the model.
  std::vector<ImageBuffer> pool;
  for (int i = 0; i < 8; ++i) pool.push_back(make_texture_image(cfg.image_size, family, image_rng));

  for (int i = 0; i < cfg.n_test_defect; ++i) {
    ImageBuffer base = make_texture_image(cfg.image_size, family, image_rng);
    SyntheticDefectSpec spec;
    spec.shape = cfg.shapes[defect_rng.uniform_int(0, static_cast<std::int64_t>(cfg.shapes.size()) - 1)];
    spec.fill = (cfg.mix_natural_fill && defect_rng.bernoulli(0.5)) ? DefectFill::natural_image
                                                                    : DefectFill::random_color;
    spec.scale = defect_rng.uniform(cfg.defect_scale_min, cfg.defect_scale_max);
    // Center placement margin that fits the largest bounding box any shape
    // of this scale can need.
    int margin = static_cast<int>(
        std::ceil(std::sqrt(spec.scale * cfg.image_size * cfg.image_size) * 1.4 / 2.0)) + 1;
    margin = std::min(margin, cfg.image_size / 2 - 1);
    spec.row = static_cast<int>(defect_rng.uniform_int(margin, cfg.image_size - 1 - margin));
    spec.col = static_cast<int>(defect_rng.uniform_int(margin, cfg.image_size - 1 - margin));

    SyntheticDefect defect = make_synthetic_defect(base, spec, pool, defect_rng);
    out.test_images.push_back(std::move(defect.image));
    out.test_labels.push_back(1);
    out.test_masks.push_back(std::move(defect.mask));
  }
  return out;
}

void write_synthetic_dataset(const std::filesystem::path& root, const std::string& category,
                             const SyntheticDataset& dataset) {
  namespace fs = std::filesystem;
  fs::path cat = root / category;
  fs::create_directories(cat / "train" / "good");
  fs::create_directories(cat / "test" / "good");
  fs::create_directories(cat / "test" / "defect");
  fs::create_directories(cat / "ground_truth" / "defect");

  char name[32];
  for (size_t i = 0; i < dataset.train.size(); ++i) {
    std::snprintf(name, sizeof(name), "%03zu.png", i);
    write_image(cat / "train" / "good" / name, dataset.train[i]);
  }
  size_t good_idx = 0, defect_idx = 0;
  for (size_t i = 0; i < dataset.test_images.size(); ++i) {
    if (dataset.test_labels[i] == 0) {
      std::snprintf(name, sizeof(name), "%03zu.png", good_idx++);
      write_image(cat / "test" / "good" / name, dataset.test_images[i]);
    } else {
      std::snprintf(name, sizeof(name), "%03zu.png", defect_idx);
      write_image(cat / "test" / "defect" / name, dataset.test_images[i]);
      std::snprintf(name, sizeof(name), "%03zu_mask.png", defect_idx++);
      write_mask(cat / "ground_truth" / "defect" / name, dataset.test_masks[i]);
    }
  }
}

} // namespace patchdet
