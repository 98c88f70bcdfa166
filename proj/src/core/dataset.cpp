#include "patchdef/dataset.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace patchdef {

namespace fs = std::filesystem;

Image load_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw ImageError("load_png: cannot read " + path.string());
  Image img(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) {
      const cv::Vec3b& bgr = m.at<cv::Vec3b>(i, j);
      img.at(0, i, j) = bgr[2] / 255.0f;
      img.at(1, i, j) = bgr[1] / 255.0f;
      img.at(2, i, j) = bgr[0] / 255.0f;
    }
  return img;
}

void save_png(const fs::path& path, const Image& img) {
  cv::Mat m(img.h, img.w, CV_8UC3);
  for (int i = 0; i < img.h; ++i)
    for (int j = 0; j < img.w; ++j) {
      auto q = [&](int c) {
        return static_cast<unsigned char>(
            std::clamp(std::lround(img.at(c, i, j) * 255.0f), 0L, 255L));
      };
      m.at<cv::Vec3b>(i, j) = cv::Vec3b(q(2), q(1), q(0));
    }
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PNG_COMPRESSION, 3}))
    throw ImageError("save_png: cannot write " + path.string());
}

Mask load_mask_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw ImageError("load_mask_png: cannot read " + path.string());
  Mask mask(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) mask.at(i, j) = m.at<unsigned char>(i, j) >= 128 ? 1.0f : 0.0f;
  return mask;
}

void save_mask_png(const fs::path& path, const Mask& mask) {
  cv::Mat m(mask.h, mask.w, CV_8UC1);
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j)
      m.at<unsigned char>(i, j) = mask.at(i, j) >= 0.5f ? 255 : 0;
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PNG_COMPRESSION, 3}))
    throw ImageError("save_mask_png: cannot write " + path.string());
}

std::vector<SampleRef> list_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::exists(dir)) throw ImageError("list_split: missing split directory " + dir.string());
  std::vector<SampleRef> out;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) {
              return std::stoi(a.filename().string()) < std::stoi(b.filename().string());
            });
  for (const auto& cdir : class_dirs) {
    const int label = std::stoi(cdir.filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cdir)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.size() > 4 && name.substr(name.size() - 4) == ".png" &&
          name.find(".mask.png") == std::string::npos)
        files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      SampleRef r;
      r.image_path = f;
      r.label = label;
      r.name = f.stem().string();
      fs::path mp = f.parent_path() / (r.name + ".mask.png");
      if (fs::exists(mp)) r.mask_path = mp;
      out.push_back(std::move(r));
    }
  }
  return out;
}

LoadedSample load_sample(const SampleRef& ref) {
  LoadedSample s;
  s.image = load_png(ref.image_path);
  s.image.label = ref.label;
  if (ref.mask_path) s.mask = load_mask_png(*ref.mask_path);
  return s;
}

SplitData load_split(const fs::path& root, const std::string& split) {
  SplitData d;
  auto refs = list_split(root, split);
  bool any_mask = false;
  for (const auto& r : refs)
    if (r.mask_path) any_mask = true;
  for (const auto& r : refs) {
    auto s = load_sample(r);
    d.images.push_back(std::move(s.image));
    d.labels.push_back(r.label);
    if (any_mask) {
      if (!s.mask)
        throw ImageError("load_split: sample " + r.name + " lacks a mask in a masked split");
      d.masks.push_back(std::move(*s.mask));
    }
  }
  return d;
}

int count_classes(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::exists(dir)) return 0;
  std::set<int> classes;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) classes.insert(std::stoi(e.path().filename().string()));
  return static_cast<int>(classes.size());
}

}  // namespace patchdef
