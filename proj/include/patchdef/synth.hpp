#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchdef/image.hpp"
#include "patchdef/rng.hpp"

namespace patchdef {

struct SynthConfig {
  int image_size = 64;
  int num_classes = 10;  // at most 10 distinct glyphs
  int train_per_class = 250;
  int val_per_class = 25;
  int test_per_class = 50;
  uint64_t seed = 1;
};

/// Renders one parametric sign image: a colored geometric glyph on a textured
/// background. Deterministic in (seed, split, class, index).
Image render_sign(const SynthConfig& cfg, int split_id, int class_id, int index);

struct GenStats {
  std::map<std::string, int> per_split_count;
};

/// Writes train/val/test splits under root in the standard dataset layout.
GenStats generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& root);

struct IngestConfig {
  int image_size = 64;
  int min_side = 90;  // inputs smaller than this are dropped
};

struct IngestStats {
  int kept = 0;
  int dropped = 0;
  std::vector<std::string> dropped_files;
};

/// Copies a class-folder dataset into the standard layout, dropping images
/// below the minimum side and resize-padding the rest. Throws when a class
/// ends up empty (naming it) or when everything is dropped.
IngestStats ingest_folder(const std::filesystem::path& src, const std::filesystem::path& dst,
                          const std::string& split, const IngestConfig& cfg);

}  // namespace patchdef
