#include "patchdef/image.hpp"

#include <algorithm>
#include <cmath>

namespace patchdef {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_same_size(int h1, int w1, int h2, int w2, const std::string& op,
                     const std::string& name) {
  if (h1 != h2 || w1 != w2)
    throw ImageError(op + ": operand '" + name + "' is " + std::to_string(h2) + "x" +
                     std::to_string(w2) + ", expected " + std::to_string(h1) + "x" +
                     std::to_string(w1));
}
}  // namespace

void validate_image(const Image& img, const std::string& name) {
  if (img.h <= 0 || img.w <= 0)
    throw ImageError("image '" + name + "': non-positive dimensions");
  if (img.px.size() != static_cast<size_t>(3) * img.h * img.w)
    throw ImageError("image '" + name + "': pixel buffer size mismatch");
  for (float v : img.px)
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw ImageError("image '" + name + "': pixel outside [0,1]");
}

void validate_binary_mask(const Mask& m, const std::string& name) {
  if (m.v.size() != static_cast<size_t>(m.h) * m.w)
    throw ImageError("mask '" + name + "': buffer size mismatch");
  if (!m.is_binary()) throw ImageError("mask '" + name + "': expected binary values");
}

int patch_side_for_occupancy(double occupancy, int h, int w) {
  return static_cast<int>(std::floor(std::sqrt(occupancy * h * w)));
}

Image compose_mask(const Image& clean, const Image& perturbed, const Mask& mask) {
  check_same_size(clean.h, clean.w, perturbed.h, perturbed.w, "compose_mask", "perturbed");
  check_same_size(clean.h, clean.w, mask.h, mask.w, "compose_mask", "mask");
  Image out(clean.h, clean.w);
  out.label = clean.label;
  const size_t plane = clean.plane();
  for (int c = 0; c < 3; ++c) {
    const float* a = clean.px.data() + c * plane;
    const float* b = perturbed.px.data() + c * plane;
    float* o = out.px.data() + c * plane;
    const float* m = mask.v.data();
    for (size_t i = 0; i < plane; ++i) o[i] = (1.0f - m[i]) * a[i] + m[i] * b[i];
  }
  return out;
}

PatchFootprint patch_footprint(const PatchSpec& spec, int img_h, int img_w) {
  PatchFootprint fp;
  fp.h = img_h;
  fp.w = img_w;
  if (spec.tf.is_identity()) {
    if (spec.row < 0 || spec.col < 0 || spec.row + spec.ph > img_h || spec.col + spec.pw > img_w)
      throw ImageError("apply_patch: patch footprint out of bounds");
    fp.mapping.reserve(static_cast<size_t>(spec.ph) * spec.pw);
    for (int i = 0; i < spec.ph; ++i)
      for (int j = 0; j < spec.pw; ++j)
        fp.mapping.emplace_back(static_cast<int64_t>(spec.row + i) * img_w + (spec.col + j),
                                static_cast<int64_t>(i) * spec.pw + j);
    return fp;
  }
  const double s = spec.tf.scale;
  const double th = spec.tf.rotation_deg * kPi / 180.0;
  const double ca = std::cos(th), sa = std::sin(th);
  const int bh = static_cast<int>(std::ceil(s * (spec.ph * std::fabs(ca) + spec.pw * std::fabs(sa))));
  const int bw = static_cast<int>(std::ceil(s * (spec.ph * std::fabs(sa) + spec.pw * std::fabs(ca))));
  if (spec.row < 0 || spec.col < 0 || spec.row + bh > img_h || spec.col + bw > img_w)
    throw ImageError("apply_patch: transformed patch out of bounds");
  const double cy = spec.row + bh / 2.0, cx = spec.col + bw / 2.0;
  const double py = spec.ph / 2.0, px = spec.pw / 2.0;
  for (int r = spec.row; r < spec.row + bh; ++r) {
    for (int c = spec.col; c < spec.col + bw; ++c) {
      // inverse transform of the output pixel center
      const double dy = (r + 0.5) - cy, dx = (c + 0.5) - cx;
      const double qy = (ca * dy + sa * dx) / s + py;
      const double qx = (-sa * dy + ca * dx) / s + px;
      if (qy < 0.0 || qy >= spec.ph || qx < 0.0 || qx >= spec.pw) continue;
      const int pi = std::min(spec.ph - 1, static_cast<int>(qy));
      const int pj = std::min(spec.pw - 1, static_cast<int>(qx));
      fp.mapping.emplace_back(static_cast<int64_t>(r) * img_w + c,
                              static_cast<int64_t>(pi) * spec.pw + pj);
    }
  }
  return fp;
}

std::pair<Image, Mask> apply_patch(const Image& image, const PatchSpec& spec) {
  PatchFootprint fp = patch_footprint(spec, image.h, image.w);
  Image out = image;
  Mask mask(image.h, image.w);
  const size_t plane = image.plane();
  const size_t patch_plane = static_cast<size_t>(spec.ph) * spec.pw;
  for (const auto& [ii, pi] : fp.mapping) {
    mask.v[static_cast<size_t>(ii)] = 1.0f;
    for (int c = 0; c < 3; ++c)
      out.px[c * plane + static_cast<size_t>(ii)] = spec.px[c * patch_plane + static_cast<size_t>(pi)];
  }
  return {std::move(out), std::move(mask)};
}

Mask dilate_mask(const Mask& mask, int kernel, int dilation) {
  if (kernel % 2 == 0) throw ImageError("dilate_mask: kernel size must be odd");
  if (kernel < 1 || dilation < 1) throw ImageError("dilate_mask: kernel and dilation must be >= 1");
  validate_binary_mask(mask, "mask");
  const int r = kernel / 2;
  Mask out(mask.h, mask.w);
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j) {
      if (mask.at(i, j) != 1.0f) continue;
      for (int di = -r; di <= r; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const int ii = i + di * dilation, jj = j + dj * dilation;
          if (ii >= 0 && ii < mask.h && jj >= 0 && jj < mask.w) out.at(ii, jj) = 1.0f;
        }
    }
  return out;
}

Mask ring_region(const Mask& dilated, const Mask& mask) {
  check_same_size(dilated.h, dilated.w, mask.h, mask.w, "ring_region", "mask");
  Mask out(mask.h, mask.w);
  for (size_t i = 0; i < mask.v.size(); ++i) {
    if (mask.v[i] > dilated.v[i])
      throw ImageError("ring_region: mask not contained in dilated region");
    out.v[i] = dilated.v[i] - mask.v[i];
  }
  return out;
}

EdgeMap mask_to_edge(const Mask& mask, int thickness) {
  if (thickness < 1) throw ImageError("mask_to_edge: thickness must be >= 1");
  validate_binary_mask(mask, "mask");
  EdgeMap edge(mask.h, mask.w);
  // erosion with a (2t+1)^2 element; out-of-bounds counts as background
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j) {
      if (mask.at(i, j) != 1.0f) continue;
      bool eroded = true;
      for (int di = -thickness; di <= thickness && eroded; ++di)
        for (int dj = -thickness; dj <= thickness; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= mask.h || jj < 0 || jj >= mask.w || mask.at(ii, jj) != 1.0f) {
            eroded = false;
            break;
          }
        }
      if (!eroded) edge.at(i, j) = 1.0f;  // mask XOR erosion
    }
  return edge;
}

Image resize_pad(const Image& image, int target_h, int target_w) {
  if (target_h <= 0 || target_w <= 0) throw ImageError("resize_pad: non-positive target");
  if (image.h == target_h && image.w == target_w) return image;
  const double scale = std::min(static_cast<double>(target_h) / image.h,
                                static_cast<double>(target_w) / image.w);
  const int nh = std::min(target_h, static_cast<int>(std::lround(image.h * scale)));
  const int nw = std::min(target_w, static_cast<int>(std::lround(image.w * scale)));
  const int off_i = (target_h - nh) / 2, off_j = (target_w - nw) / 2;
  Image out(target_h, target_w);
  out.label = image.label;
  const double sy = static_cast<double>(image.h) / nh, sx = static_cast<double>(image.w) / nw;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < nh; ++i) {
      double fy = (i + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(image.h - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, image.h - 1);
      const double wy = fy - y0;
      for (int j = 0; j < nw; ++j) {
        double fx = (j + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(image.w - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, image.w - 1);
        const double wx = fx - x0;
        const double v = (1 - wy) * ((1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1)) +
                         wy * ((1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1));
        out.at(c, off_i + i, off_j + j) = static_cast<float>(v);
      }
    }
  return out;
}

}  // namespace patchdef
