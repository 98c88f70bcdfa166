#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchdef/image.hpp"

namespace patchdef {

// PNG I/O. Images are 3-channel; masks are single-channel {0,255}.
Image load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& img);
Mask load_mask_png(const std::filesystem::path& path);
void save_mask_png(const std::filesystem::path& path, const Mask& mask);

/// One sample of a dataset laid out as <root>/<split>/<class_id>/<name>.png,
/// with an optional sibling <name>.mask.png for adversarial sets.
struct SampleRef {
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> mask_path;
  int label = -1;
  std::string name;
};

/// Deterministically ordered (by class, then filename) sample listing.
std::vector<SampleRef> list_split(const std::filesystem::path& root, const std::string& split);

struct LoadedSample {
  Image image;
  std::optional<Mask> mask;
};

LoadedSample load_sample(const SampleRef& ref);

/// In-memory split: images (and masks when present) loaded up front.
struct SplitData {
  std::vector<Image> images;
  std::vector<Mask> masks;  // empty when the split has no masks
  std::vector<int> labels;
};

SplitData load_split(const std::filesystem::path& root, const std::string& split);

int count_classes(const std::filesystem::path& root, const std::string& split);

}  // namespace patchdef
