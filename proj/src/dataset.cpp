#include "patchdet/dataset.hpp"

#include <algorithm>

#include "patchdet/errors.hpp"
#include "patchdet/imageio.hpp"

namespace fs = std::filesystem;

namespace patchdet {

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace

std::vector<const DatasetEntry*> DatasetLayout::train_entries() const {
  std::vector<const DatasetEntry*> out;
  for (const auto& e : entries)
    if (e.split == Split::train) out.push_back(&e);
  return out;
}

std::vector<const DatasetEntry*> DatasetLayout::test_entries() const {
  std::vector<const DatasetEntry*> out;
  for (const auto& e : entries)
    if (e.split == Split::test) out.push_back(&e);
  return out;
}

DatasetLayout scan_layout(const fs::path& root, const std::string& category,
                          bool verify_integrity) {
  fs::path cat = root / category;
  fs::path train_dir = cat / "train";
  fs::path test_dir = cat / "test";
  if (!fs::is_directory(train_dir))
    throw LayoutError("missing train directory: " + train_dir.string());
  if (!fs::is_directory(test_dir))
    throw LayoutError("missing test directory: " + test_dir.string());

  DatasetLayout layout;
  layout.root = root;
  layout.category = category;

  // Train split: only "good" images are allowed.
  for (const auto& sub : sorted_subdirs(train_dir)) {
    std::string defect = sub.filename().string();
    if (defect != "good")
      throw LayoutError("train split contains non-good directory: " + sub.string());
    for (const auto& img : sorted_images(sub))
      layout.entries.push_back({img, Split::train, defect, std::nullopt, false});
  }
  if (layout.entries.empty())
    throw LayoutError("train split has no images under " + train_dir.string());

  // Test split, with ground-truth masks for defective images.
  fs::path gt_dir = cat / "ground_truth";
  for (const auto& sub : sorted_subdirs(test_dir)) {
    std::string defect = sub.filename().string();
    for (const auto& img : sorted_images(sub)) {
      DatasetEntry entry{img, Split::test, defect, std::nullopt, false};
      if (defect != "good") {
        fs::path mask = gt_dir / defect / (img.stem().string() + "_mask.png");
        if (fs::exists(mask)) {
          entry.mask_path = mask;
        } else {
          entry.mask_missing = true;
        }
      }
      layout.entries.push_back(std::move(entry));
    }
  }

  if (verify_integrity) {
    for (const auto& entry : layout.entries) {
      if (!entry.mask_path) continue;
      ImageBuffer img = read_image(entry.image_path);
      PixelMask mask = read_mask(*entry.mask_path);
      if (img.height != mask.height || img.width != mask.width)
        throw IntegrityError("mask shape " + std::to_string(mask.height) + "x" +
                             std::to_string(mask.width) + " does not match image " +
                             entry.image_path.string());
      if (mask.count_nonzero() == 0)
        throw IntegrityError("defective image has an empty mask: " +
                             entry.mask_path->string());
    }
  }
  return layout;
}

ImageBuffer load_image(const fs::path& path, int target_size) {
  ImageBuffer raw = read_image(path);
  if (raw.channels == 1) {
    ImageBuffer rgb(raw.height, raw.width, 3);
    for (int r = 0; r < raw.height; ++r)
      for (int c = 0; c < raw.width; ++c)
        for (int ch = 0; ch < 3; ++ch) rgb.at(r, c, ch) = raw.at(r, c, 0);
    raw = std::move(rgb);
  }
  ImageBuffer out = resize_bilinear(raw, target_size, target_size);
  validate(out);
  return out;
}

PixelMask load_entry_mask(const DatasetEntry& entry, int target_size) {
  if (!entry.mask_path)
    throw ArgumentError("entry has no mask: " + entry.image_path.string());
  PixelMask raw = read_mask(*entry.mask_path);
  return resize_mask(raw, target_size, target_size);
}

ImageBuffer crop_at(const ImageBuffer& img, int top, int left, int size) {
  if (size <= 0 || top < 0 || left < 0 || top + size > img.height || left + size > img.width)
    throw ArgumentError("crop outside image bounds");
  ImageBuffer out(size, size, img.channels);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(r, c, ch) = img.at(top + r, left + c, ch);
  return out;
}

ImageBuffer crop_patch(const ImageBuffer& img, int size, Rng& rng) {
  if (size > img.height || size > img.width)
    throw ArgumentError("crop size exceeds image side");
  int top = static_cast<int>(rng.uniform_int(0, img.height - size));
  int left = static_cast<int>(rng.uniform_int(0, img.width - size));
  return crop_at(img, top, left, size);
}

} // namespace patchdet
