#include "patchdet/localize.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "patchdet/dataset.hpp"
#include "patchdet/errors.hpp"
#include "patchdet/imageio.hpp"

namespace patchdet {

EmbeddingGrid dense_extract(Model& model, const ImageBuffer& image, int patch_size, int stride,
                            int batch_size) {
  if (image.height != image.width)
    throw ArgumentError("dense_extract expects a square image");
  if (patch_size <= 0 || patch_size > image.height)
    throw ArgumentError("patch_size must be within the image side");
  if (stride <= 0) throw ArgumentError("stride must be positive");
  if ((image.height - patch_size) % stride != 0)
    throw ArgumentError("(image_size - patch_size) must be divisible by stride");

  EmbeddingGrid grid;
  grid.image_size = image.height;
  grid.patch_size = patch_size;
  grid.stride = stride;
  grid.grid = (image.height - patch_size) / stride + 1;
  grid.d = model.embedding_dim();
  grid.data.resize(static_cast<size_t>(grid.grid) * grid.grid * grid.d);

  std::vector<ImageBuffer> patches;
  patches.reserve(batch_size);
  size_t cell = 0;
  auto flush = [&]() {
    if (patches.empty()) return;
    EmbeddingBatch emb = model.embed_images(patches, batch_size);
    for (int i = 0; i < emb.n; ++i)
      std::memcpy(grid.data.data() + (cell - patches.size() + i) * grid.d,
                  emb.data.data() + static_cast<size_t>(i) * grid.d,
                  sizeof(float) * grid.d);
    patches.clear();
  };
  for (int i = 0; i < grid.grid; ++i) {
    for (int j = 0; j < grid.grid; ++j) {
      patches.push_back(crop_at(image, i * stride, j * stride, patch_size));
      ++cell;
      if (static_cast<int>(patches.size()) == batch_size) flush();
    }
  }
  flush();
  return grid;
}

namespace {

ScoreMap make_map_like(const EmbeddingGrid& grid) {
  ScoreMap map;
  map.grid = grid.grid;
  map.patch_size = grid.patch_size;
  map.stride = grid.stride;
  map.image_size = grid.image_size;
  map.values.resize(static_cast<size_t>(grid.grid) * grid.grid);
  return map;
}

Eigen::VectorXd cell_vector(const EmbeddingGrid& grid, int i, int j) {
  Eigen::VectorXd e(grid.d);
  const float* src = grid.cell(i, j);
  for (int k = 0; k < grid.d; ++k) e(k) = src[k];
  return e;
}

} // namespace

ScoreMap score_grid(const EmbeddingGrid& grid, const GdeModel& gde) {
  ScoreMap map = make_map_like(grid);
  for (int i = 0; i < grid.grid; ++i)
    for (int j = 0; j < grid.grid; ++j) map.at(i, j) = score_gde(gde, cell_vector(grid, i, j));
  return map;
}

ScoreMap score_grid(const EmbeddingGrid& grid, const std::vector<GdeModel>& per_location) {
  if (per_location.size() != static_cast<size_t>(grid.grid) * grid.grid)
    throw ArgumentError("per-location model list must have G*G entries");
  ScoreMap map = make_map_like(grid);
  for (int i = 0; i < grid.grid; ++i)
    for (int j = 0; j < grid.grid; ++j)
      map.at(i, j) =
          score_gde(per_location[static_cast<size_t>(i) * grid.grid + j], cell_vector(grid, i, j));
  return map;
}

PixelScoreMap gaussian_upsample(const ScoreMap& map, double sigma) {
  if (sigma <= 0.0) throw ArgumentError("sigma must be positive");
  if (map.grid <= 0 || map.image_size <= 0) throw ArgumentError("empty score map");

  const int p = map.patch_size;
  std::vector<double> kernel(static_cast<size_t>(p) * p);
  const double center = (p - 1) / 2.0;
  for (int u = 0; u < p; ++u)
    for (int v = 0; v < p; ++v) {
      double du = u - center, dv = v - center;
      kernel[static_cast<size_t>(u) * p + v] = std::exp(-(du * du + dv * dv) / (2 * sigma * sigma));
    }

  // Accumulating deviations from the grid mean (instead of raw scores)
  // makes a constant grid map to exactly that constant after the per-pixel
  // weight normalization.
  double grid_mean = 0.0;
  for (double v : map.values) grid_mean += v;
  grid_mean /= static_cast<double>(map.values.size());

  PixelScoreMap out;
  out.size = map.image_size;
  out.values.assign(static_cast<size_t>(out.size) * out.size, 0.0);
  std::vector<double> weight(out.values.size(), 0.0);

  for (int i = 0; i < map.grid; ++i)
    for (int j = 0; j < map.grid; ++j) {
      const double dev = map.at(i, j) - grid_mean;
      const int top = i * map.stride, left = j * map.stride;
      for (int u = 0; u < p; ++u) {
        double* orow = out.values.data() + static_cast<size_t>(top + u) * out.size + left;
        double* wrow = weight.data() + static_cast<size_t>(top + u) * out.size + left;
        const double* krow = kernel.data() + static_cast<size_t>(u) * p;
        for (int v = 0; v < p; ++v) {
          orow[v] += dev * krow[v];
          wrow[v] += krow[v];
        }
      }
    }

  for (size_t idx = 0; idx < out.values.size(); ++idx)
    out.values[idx] = weight[idx] > 0.0 ? grid_mean + out.values[idx] / weight[idx] : grid_mean;
  return out;
}

AnomalyScore image_score_from_map(const ScoreMap& map) {
  if (map.values.empty()) throw ArgumentError("empty score map");
  return *std::max_element(map.values.begin(), map.values.end());
}

namespace {

// Piecewise-linear jet-style colormap on [0,1].
void colormap(double t, float& r, float& g, float& b) {
  auto band = [](double x) { return static_cast<float>(std::clamp(x, 0.0, 1.0)); };
  r = band(1.5 - std::abs(4.0 * t - 3.0));
  g = band(1.5 - std::abs(4.0 * t - 2.0));
  b = band(1.5 - std::abs(4.0 * t - 1.0));
}

constexpr char kMapMagic[8] = {'P', 'D', 'M', 'A', 'P', '0', '0', '1'};

} // namespace

void emit_heatmap(const PixelScoreMap& map, const ImageBuffer& original,
                  const std::filesystem::path& out_png) {
  if (original.height != map.size || original.width != map.size)
    throw ArgumentError("heatmap size must match the original image");

  double lo = map.values[0], hi = map.values[0];
  for (double v : map.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;

  ImageBuffer overlay(map.size, map.size, 3);
  for (int r = 0; r < map.size; ++r)
    for (int c = 0; c < map.size; ++c) {
      double t = span > 0.0 ? (map.at(r, c) - lo) / span : 0.0;
      float cr, cg, cb;
      colormap(t, cr, cg, cb);
      for (int ch = 0; ch < 3; ++ch) {
        float base = original.at(r, c, std::min(ch, original.channels - 1));
        float heat = ch == 0 ? cr : (ch == 1 ? cg : cb);
        overlay.at(r, c, ch) = 0.5f * base + 0.5f * heat;
      }
    }
  write_image(out_png, overlay);

  std::filesystem::path raw = out_png;
  raw.replace_extension(".pdm");
  write_pixel_map(raw, map);
}

void write_pixel_map(const std::filesystem::path& path, const PixelScoreMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write pixel map: " + path.string());
  os.write(kMapMagic, sizeof(kMapMagic));
  std::uint32_t h = static_cast<std::uint32_t>(map.size), w = h;
  os.write(reinterpret_cast<const char*>(&h), sizeof(h));
  os.write(reinterpret_cast<const char*>(&w), sizeof(w));
  for (double v : map.values) {
    float f = static_cast<float>(v);
    os.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
  if (!os) throw LoadError("failed writing pixel map: " + path.string());
}

PixelScoreMap read_pixel_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open pixel map: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMapMagic, sizeof(kMapMagic)) != 0)
    throw LoadError("not a pixel map file: " + path.string());
  std::uint32_t h = 0, w = 0;
  is.read(reinterpret_cast<char*>(&h), sizeof(h));
  is.read(reinterpret_cast<char*>(&w), sizeof(w));
  if (!is || h != w) throw LoadError("bad pixel map header: " + path.string());
  PixelScoreMap map;
  map.size = static_cast<int>(h);
  map.values.resize(static_cast<size_t>(h) * w);
  for (double& v : map.values) {
    float f = 0.f;
    is.read(reinterpret_cast<char*>(&f), sizeof(f));
    v = f;
  }
  if (!is) throw LoadError("truncated pixel map: " + path.string());
  return map;
}

} // namespace patchdet
