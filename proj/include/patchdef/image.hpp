#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace patchdef {

/// Raised by the image algebra when a precondition fails. The message names
/// the offending operand.
struct ImageError : std::runtime_error {
  explicit ImageError(const std::string& what) : std::runtime_error(what) {}
};

/// 3-channel float raster, CHW layout, values in [0,1].
struct Image {
  int h = 0, w = 0;
  std::vector<float> px;  // 3*h*w
  int label = -1;         // optional class id

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(3) * h_ * w_, 0.0f) {}

  float& at(int c, int i, int j) { return px[(static_cast<size_t>(c) * h + i) * w + j]; }
  float at(int c, int i, int j) const { return px[(static_cast<size_t>(c) * h + i) * w + j]; }
  size_t plane() const { return static_cast<size_t>(h) * w; }
};

/// Single-channel raster in [0,1]. Ground-truth masks are binary {0,1};
/// network predictions are soft.
struct Mask {
  int h = 0, w = 0;
  std::vector<float> v;  // h*w

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0f) {}

  float& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  float at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }

  bool is_binary() const {
    for (float x : v)
      if (x != 0.0f && x != 1.0f) return false;
    return true;
  }
  double sum() const {
    double s = 0.0;
    for (float x : v) s += x;
    return s;
  }
};

using EdgeMap = Mask;  // same raster contract; ground-truth edges are binary

struct PatchTransform {
  float scale = 1.0f;
  float rotation_deg = 0.0f;
  bool is_identity() const { return scale == 1.0f && rotation_deg == 0.0f; }
};

/// Patch pixels plus placement and transform — the attack's (p, l, t).
struct PatchSpec {
  int ph = 0, pw = 0;
  std::vector<float> px;  // 3*ph*pw in [0,1]
  int row = 0, col = 0;   // top-left placement in the target image
  PatchTransform tf;

  float& at(int c, int i, int j) { return px[(static_cast<size_t>(c) * ph + i) * pw + j]; }
  float at(int c, int i, int j) const { return px[(static_cast<size_t>(c) * ph + i) * pw + j]; }
};

/// Side length of a square patch with the given area fraction.
int patch_side_for_occupancy(double occupancy, int h, int w);

// ---- operations -------------------------------------------------------------

/// (1-M) .* clean + M .* perturbed, mask broadcast over channels.
Image compose_mask(const Image& clean, const Image& perturbed, const Mask& mask);

/// Applies the (transformed) patch; returns the patched image and the binary
/// mask of exactly the covered pixels. Pixels outside the mask are
/// bit-identical to the input. Throws if the transformed patch leaves the
/// image.
std::pair<Image, Mask> apply_patch(const Image& image, const PatchSpec& spec);

/// Morphological dilation with a k x k structuring element sampled at the
/// given dilation rate (k odd). Output is binary and a superset of the input.
Mask dilate_mask(const Mask& mask, int kernel, int dilation);

/// dilated minus mask: the annulus of context pixels. Throws if the
/// containment precondition (dilated superset of mask) is violated.
Mask ring_region(const Mask& dilated, const Mask& mask);

/// mask XOR erosion(mask, thickness): a binary boundary band of the given
/// thickness, empty for an empty mask.
EdgeMap mask_to_edge(const Mask& mask, int thickness);

/// Aspect-preserving bilinear scale to fit, centered, zero-padded to exactly
/// (target_h, target_w).
Image resize_pad(const Image& image, int target_h, int target_w);

// ---- helpers shared by attack/defense code ----------------------------------

/// Footprint of the transformed patch: for each covered image pixel, the index
/// of its (nearest-neighbor) source pixel in the patch. Used both to paste the
/// patch and to scatter gradients back to patch pixels.
struct PatchFootprint {
  std::vector<std::pair<int64_t, int64_t>> mapping;  // (image flat idx, patch flat idx), per plane
  int h = 0, w = 0;
};

PatchFootprint patch_footprint(const PatchSpec& spec, int img_h, int img_w);

void validate_image(const Image& img, const std::string& name);
void validate_binary_mask(const Mask& m, const std::string& name);

}  // namespace patchdef
