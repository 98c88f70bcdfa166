#include <algorithm>
#include <map>

#include "patchdef/dataset.hpp"
#include "patchdef/synth.hpp"

namespace patchdef {

IngestStats ingest_folder(const std::filesystem::path& src, const std::filesystem::path& dst,
                          const std::string& split, const IngestConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::exists(src)) throw ImageError("ingest_folder: missing source " + src.string());
  IngestStats stats;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(src))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw ImageError("ingest_folder: no class directories in " + src.string());

  std::map<std::string, int> kept_per_class;
  for (const auto& cdir : class_dirs) {
    const std::string cls = cdir.filename().string();
    kept_per_class[cls] = 0;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cdir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Image img;
      try {
        img = load_png(f);
      } catch (const ImageError&) {
        stats.dropped_files.push_back(f.string());
        ++stats.dropped;
        continue;
      }
      if (img.h < cfg.min_side || img.w < cfg.min_side) {
        stats.dropped_files.push_back(f.string());
        ++stats.dropped;
        continue;
      }
      Image out = resize_pad(img, cfg.image_size, cfg.image_size);
      save_png(dst / split / cls / (f.stem().string() + ".png"), out);
      ++kept_per_class[cls];
      ++stats.kept;
    }
  }
  if (stats.kept == 0)
    throw ImageError("ingest_folder: all " + std::to_string(stats.dropped) +
                     " candidate images fell below the " + std::to_string(cfg.min_side) +
                     "px minimum; nothing ingested");
  for (const auto& [cls, kept] : kept_per_class)
    if (kept == 0)
      throw ImageError("ingest_folder: class '" + cls + "' is empty after size filtering");
  return stats;
}

}  // namespace patchdef
