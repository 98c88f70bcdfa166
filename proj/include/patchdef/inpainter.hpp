#pragma once

#include <vector>

#include "patchdef/image.hpp"
#include "patchdef/layers.hpp"

namespace patchdef {

/// Hole/ring weights resampled to each decoder resolution. The hole is
/// nearest-resampled; the ring is recomputed by dilating at that scale so the
/// two stay disjoint at every level.
struct MaskPyramid {
  nn::Var hole_q, ring_q;  // quarter resolution (N,1,H/4,W/4)
  nn::Var hole_h, ring_h;  // half resolution (N,1,H/2,W/2)
  bool any_hole = false;
};

struct DilateConfig {
  int kernel = 7;
  int rate = 2;
  int radius() const { return (kernel / 2) * rate; }
};

MaskPyramid build_mask_pyramid(const std::vector<const Mask*>& holes, const DilateConfig& cfg);

/// Nearest-neighbor resample of a mask to (th, tw).
Mask resample_mask(const Mask& m, int th, int tw);

/// True when the mask covers everything at the decoder's quarter-resolution
/// working grid, leaving no clean context to normalize from.
bool mask_leaves_no_context(const Mask& m);

/// Reconstruction decoder: eight context-normalized convolution blocks
/// (128,128,256,256 at quarter resolution, then 128,128,64,3 at half
/// resolution), a final nearest x2 resize back to full resolution and a
/// 3-channel tanh convolution remapped to [0,1].
class InpaintDecoder {
 public:
  InpaintDecoder() = default;
  InpaintDecoder(Rng& rng, bool with_image_skip = true, float epsilon = 1e-5f);

  /// features: (N,256,H/4,W/4); adv: (N,3,H,W) constant. Output (N,3,H,W) in [0,1].
  nn::Var forward(const nn::Var& features, const nn::Var& adv, const MaskPyramid& masks,
                  bool* ring_was_empty = nullptr) const;

  void params(nn::ParamMap& m, const std::string& prefix);
  bool with_image_skip() const { return with_image_skip_; }

 private:
  std::vector<nn::ContextNormBlock> blocks_;
  nn::Conv2d out_conv_;
  bool with_image_skip_ = true;
};

/// m .* x_hat + (1-m) .* x_adv — the recovered image passes the network output
/// only inside the predicted region.
Image composite(const Image& x_hat, const Image& x_adv, const Mask& m_hat);

/// Graph-side composite for training; adv and mask enter as constants.
nn::Var composite_graph(const nn::Var& x_hat, const nn::Var& x_adv, const nn::Var& m_hat);

/// Full-resolution mask batch as a (N,1,H,W) constant.
nn::Var mask_batch_var(const std::vector<const Mask*>& masks);

}  // namespace patchdef
