#pragma once

#include <filesystem>
#include <vector>

#include "patchdet/image.hpp"
#include "patchdet/model.hpp"
#include "patchdet/score.hpp"

namespace patchdet {

/// Dense patch embeddings on a regular grid. Cell (i, j) holds the
/// embedding of the patch whose top-left corner is (i*stride, j*stride).
struct EmbeddingGrid {
  int grid = 0; // G, with G = (image_size - patch_size)/stride + 1
  int d = 0;
  int patch_size = 0, stride = 0, image_size = 0;
  std::vector<float> data; // (G*G) x d, row-major over cells then dims

  const float* cell(int i, int j) const {
    return data.data() + (static_cast<size_t>(i) * grid + j) * d;
  }
};

/// Grid of patch anomaly scores plus the geometry needed to upsample it.
struct ScoreMap {
  int grid = 0;
  int patch_size = 0, stride = 0, image_size = 0;
  std::vector<double> values; // G x G row-major

  double& at(int i, int j) { return values[static_cast<size_t>(i) * grid + j]; }
  double at(int i, int j) const { return values[static_cast<size_t>(i) * grid + j]; }
};

struct PixelScoreMap {
  int size = 0;
  std::vector<double> values; // size x size row-major

  double& at(int r, int c) { return values[static_cast<size_t>(r) * size + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * size + c]; }
};

/// Extract embeddings of every patch on the stride grid. Requires a square
/// image with (side - patch_size) divisible by stride. Patches are embedded
/// in eval mode, in batches, row-major over the grid.
EmbeddingGrid dense_extract(Model& model, const ImageBuffer& image, int patch_size, int stride,
                            int batch_size = 128);

/// Elementwise GDE scoring of a grid.
ScoreMap score_grid(const EmbeddingGrid& grid, const GdeModel& gde);

/// Per-location variant: models are indexed by flattened (i, j); the list
/// length must equal G*G.
ScoreMap score_grid(const EmbeddingGrid& grid, const std::vector<GdeModel>& per_location);

/// Spread each patch score over its receptive field with a Gaussian kernel
/// (std sigma, patch_size x patch_size support), then normalize by the
/// per-pixel sum of kernel weights: a constant grid yields a constant map
/// and border pixels stay comparable to interior ones.
PixelScoreMap gaussian_upsample(const ScoreMap& map, double sigma);

/// Image-level detection score: max over grid cells.
AnomalyScore image_score_from_map(const ScoreMap& map);

/// Write a PNG overlay (min-max normalized colormap at 50% alpha over the
/// input) plus the raw float map alongside it (extension .pdm).
void emit_heatmap(const PixelScoreMap& map, const ImageBuffer& original,
                  const std::filesystem::path& out_png);

/// Raw map file: magic, height, width, little-endian float32 row-major.
void write_pixel_map(const std::filesystem::path& path, const PixelScoreMap& map);
PixelScoreMap read_pixel_map(const std::filesystem::path& path);

} // namespace patchdet
