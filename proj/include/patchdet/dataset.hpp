#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchdet/image.hpp"
#include "patchdet/rng.hpp"

namespace patchdet {

enum class Split { train, test };

/// One image of an MVTec-style category layout. Non-good test images carry
/// a mask path when the ground-truth file exists; a missing mask is recorded
/// explicitly (mask_path empty, mask_missing true) rather than defaulted.
struct DatasetEntry {
  std::filesystem::path image_path;
  Split split = Split::train;
  std::string defect_type; // "good" for normals
  std::optional<std::filesystem::path> mask_path;
  bool mask_missing = false; // defective test image without a ground-truth file
};

struct DatasetLayout {
  std::filesystem::path root;
  std::string category;
  std::vector<DatasetEntry> entries; // stable lexicographic order

  std::vector<const DatasetEntry*> train_entries() const;
  std::vector<const DatasetEntry*> test_entries() const;
};

/// Walk `<root>/<category>/{train,test}/<defect_type>/*.png|jpg` plus
/// `<root>/<category>/ground_truth/<defect_type>/*_mask.png`.
/// Ordering is lexicographic by (split, defect_type, filename) and identical
/// across runs. Verifies that each mask decodes to the same spatial shape as
/// its image; disable with verify_integrity=false to skip the decode pass.
DatasetLayout scan_layout(const std::filesystem::path& root, const std::string& category,
                          bool verify_integrity = true);

/// Decode, scale values to [0,1], replicate grayscale to 3 channels, and
/// resize to target_size x target_size (bilinear, antialiased).
ImageBuffer load_image(const std::filesystem::path& path, int target_size);

/// Load the mask paired with an entry at the working resolution
/// (nearest-neighbor, re-binarized).
PixelMask load_entry_mask(const DatasetEntry& entry, int target_size);

/// Random size x size crop fully inside the image; the top-left corner is
/// uniform over all valid positions.
ImageBuffer crop_patch(const ImageBuffer& img, int size, Rng& rng);

/// Deterministic crop used by crop_patch and the replay path.
ImageBuffer crop_at(const ImageBuffer& img, int top, int left, int size);

} // namespace patchdet
