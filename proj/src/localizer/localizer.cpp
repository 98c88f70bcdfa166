#include "patchdef/localizer.hpp"

#include <deque>

namespace patchdef {

using nn::Var;

Encoder::Encoder(Rng& rng) {
  stem_ = nn::Conv2d(3, 64, 3, 1, 1, rng);
  const int chans[8] = {64, 64, 128, 128, 256, 256, 256, 256};
  const int strides[8] = {1, 1, 2, 1, 2, 1, 1, 1};
  int in_ch = 64;
  for (int i = 0; i < 8; ++i) {
    blocks_.emplace_back(in_ch, chans[i], strides[i], rng);
    in_ch = chans[i];
  }
}

Var Encoder::forward(const Var& x) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] % kDownscale != 0 || s[3] % kDownscale != 0)
    throw ImageError("encoder: expects (N,3,H,W) with H,W divisible by 4, got " +
                     nn::Tensor::shape_str(s));
  Var h = nn::elu(stem_.forward(x));
  for (const auto& b : blocks_) h = b.forward(h);
  return h;
}

void Encoder::params(nn::ParamMap& m, const std::string& prefix) {
  stem_.params(m, prefix + ".stem");
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].params(m, prefix + ".block" + std::to_string(i + 1));
}

MaskDecoder::MaskDecoder(Rng& rng) {
  res1_ = nn::ResBlock(256, 128, 1, rng);
  cbam1_ = nn::CbamBlock(128, rng);
  res2_ = nn::ResBlock(128, 64, 1, rng);
  cbam2_ = nn::CbamBlock(64, rng);
  res3_ = nn::ResBlock(64, 32, 1, rng);
  cbam3_ = nn::CbamBlock(32, rng);
  conv16_ = nn::Conv2d(32, 16, 3, 1, 1, rng);
  conv1_ = nn::Conv2d(16, 1, 3, 1, 1, rng);
}

Var MaskDecoder::forward(const Var& features) const {
  Var h = nn::upsample_nearest2(cbam1_.forward(res1_.forward(features)));
  h = cbam2_.forward(res2_.forward(h));
  h = nn::upsample_nearest2(cbam3_.forward(res3_.forward(h)));
  h = nn::elu(conv16_.forward(h));
  return nn::sigmoid(conv1_.forward(h));
}

void MaskDecoder::params(nn::ParamMap& m, const std::string& prefix) {
  res1_.params(m, prefix + ".res1");
  cbam1_.params(m, prefix + ".cbam1");
  res2_.params(m, prefix + ".res2");
  cbam2_.params(m, prefix + ".cbam2");
  res3_.params(m, prefix + ".res3");
  cbam3_.params(m, prefix + ".cbam3");
  conv16_.params(m, prefix + ".conv16");
  conv1_.params(m, prefix + ".conv1");
}

Mask fill_closed_regions(const Mask& binary_edge) {
  const int h = binary_edge.h, w = binary_edge.w;
  // background pixels reachable from the border are "outside"
  std::vector<char> outside(static_cast<size_t>(h) * w, 0);
  std::deque<std::pair<int, int>> q;
  auto push = [&](int i, int j) {
    const size_t k = static_cast<size_t>(i) * w + j;
    if (!outside[k] && binary_edge.v[k] == 0.0f) {
      outside[k] = 1;
      q.emplace_back(i, j);
    }
  };
  for (int i = 0; i < h; ++i) {
    push(i, 0);
    push(i, w - 1);
  }
  for (int j = 0; j < w; ++j) {
    push(0, j);
    push(h - 1, j);
  }
  while (!q.empty()) {
    auto [i, j] = q.front();
    q.pop_front();
    if (i > 0) push(i - 1, j);
    if (i + 1 < h) push(i + 1, j);
    if (j > 0) push(i, j - 1);
    if (j + 1 < w) push(i, j + 1);
  }
  Mask filled(h, w);
  for (size_t k = 0; k < filled.v.size(); ++k) filled.v[k] = outside[k] ? 0.0f : 1.0f;
  return filled;
}

namespace {

Mask binarize(const Mask& soft, float tau) {
  Mask out(soft.h, soft.w);
  for (size_t i = 0; i < soft.v.size(); ++i) out.v[i] = soft.v[i] >= tau ? 1.0f : 0.0f;
  return out;
}

Mask erode(const Mask& m, int r) {
  Mask out(m.h, m.w);
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j) {
      bool all = true;
      for (int di = -r; di <= r && all; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= m.h || jj < 0 || jj >= m.w || m.at(ii, jj) != 1.0f) {
            all = false;
            break;
          }
        }
      out.at(i, j) = all ? 1.0f : 0.0f;
    }
  return out;
}

}  // namespace

Mask fuse_masks(const Mask& region_soft, const Mask& edge_soft, const FuseConfig& cfg) {
  if (region_soft.h != edge_soft.h || region_soft.w != edge_soft.w)
    throw ImageError("fuse_masks: region/edge size mismatch");
  Mask region = binarize(region_soft, cfg.tau);
  Mask edge = binarize(edge_soft, cfg.tau);
  // morphological closing bridges small gaps in the predicted edge loop
  if (cfg.close_kernel > 1) {
    const int r = cfg.close_kernel / 2;
    edge = erode(dilate_mask(edge, cfg.close_kernel, 1), r);
  }
  Mask filled = fill_closed_regions(edge);
  Mask fused(region.h, region.w);
  for (size_t i = 0; i < fused.v.size(); ++i) fused.v[i] = std::max(region.v[i], filled.v[i]);
  return fused;
}

Mask mask_from_tensor(const nn::Tensor& t, int sample) {
  const auto& s = t.shape();
  if (s.size() != 4 || s[1] != 1) throw ImageError("mask_from_tensor: expects (N,1,H,W)");
  Mask m(s[2], s[3]);
  const float* p = t.data() + static_cast<int64_t>(sample) * s[2] * s[3];
  std::copy(p, p + m.v.size(), m.v.begin());
  return m;
}

}  // namespace patchdef
