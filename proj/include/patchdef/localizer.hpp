#pragma once

#include <vector>

#include "patchdef/image.hpp"
#include "patchdef/layers.hpp"

namespace patchdef {

/// Shared feature encoder: a 3->64 stem plus eight residual blocks without
/// normalization layers, channels 64,64,128,128,256,256,256,256 with stride-2
/// reductions at blocks 3 and 5. Output is (N,256,H/4,W/4).
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(Rng& rng);

  nn::Var forward(const nn::Var& x) const;
  void params(nn::ParamMap& m, const std::string& prefix);

  static constexpr int kOutChannels = 256;
  static constexpr int kDownscale = 4;

 private:
  nn::Conv2d stem_;
  std::vector<nn::ResBlock> blocks_;
};

/// Mask decoding head: ResBlock(128)+CBAM+Up2, ResBlock(64)+CBAM,
/// ResBlock(32)+CBAM+Up2, Conv(16,ELU), Conv(1,Sigmoid). Restores the encoder
/// input resolution; region and edge branches are two independent instances.
class MaskDecoder {
 public:
  MaskDecoder() = default;
  explicit MaskDecoder(Rng& rng);

  nn::Var forward(const nn::Var& features) const;
  void params(nn::ParamMap& m, const std::string& prefix);

 private:
  nn::ResBlock res1_, res2_, res3_;
  nn::CbamBlock cbam1_, cbam2_, cbam3_;
  nn::Conv2d conv16_, conv1_;
};

struct FuseConfig {
  float tau = 0.5f;       // binarization threshold
  int close_kernel = 3;   // morphological closing before filling edge loops
};

/// Binarize both cues, close + flood-fill the edge map's interior, and take
/// the pixelwise maximum. The result is binary and a superset of the
/// binarized region cue.
Mask fuse_masks(const Mask& region_soft, const Mask& edge_soft, const FuseConfig& cfg = {});

/// Fill every region not reachable from the border background: edge pixels
/// plus any enclosed interior.
Mask fill_closed_regions(const Mask& binary_edge);

/// Convert one sample of a (N,1,H,W) prediction tensor into a raster mask.
Mask mask_from_tensor(const nn::Tensor& t, int sample);

}  // namespace patchdef
