#include "patchdef/inpainter.hpp"

#include <algorithm>
#include <cmath>

namespace patchdef {

using nn::Tensor;
using nn::Var;

Mask resample_mask(const Mask& m, int th, int tw) {
  Mask out(th, tw);
  const double sy = static_cast<double>(m.h) / th, sx = static_cast<double>(m.w) / tw;
  for (int i = 0; i < th; ++i) {
    const int si = std::min(m.h - 1, static_cast<int>((i + 0.5) * sy));
    for (int j = 0; j < tw; ++j) {
      const int sj = std::min(m.w - 1, static_cast<int>((j + 0.5) * sx));
      out.at(i, j) = m.at(si, sj);
    }
  }
  return out;
}

bool mask_leaves_no_context(const Mask& m) {
  Mask q = resample_mask(m, std::max(1, m.h / 4), std::max(1, m.w / 4));
  for (float v : q.v)
    if (v < 0.5f) return false;
  return true;
}

nn::Var mask_batch_var(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw ImageError("mask_batch_var: empty batch");
  const int h = masks[0]->h, w = masks[0]->w;
  Tensor t({static_cast<int>(masks.size()), 1, h, w});
  for (size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->h != h || masks[n]->w != w)
      throw ImageError("mask_batch_var: inconsistent mask sizes");
    std::copy(masks[n]->v.begin(), masks[n]->v.end(),
              t.data() + n * static_cast<size_t>(h) * w);
  }
  return nn::constant(std::move(t));
}

namespace {

Mask binarize05(const Mask& m) {
  Mask out(m.h, m.w);
  for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = m.v[i] >= 0.5f ? 1.0f : 0.0f;
  return out;
}

// hole + ring at one pyramid level; ring recomputed by dilation at this scale
std::pair<Mask, Mask> level_masks(const Mask& full_hole, int th, int tw, int full_radius) {
  Mask hole = resample_mask(full_hole, th, tw);
  const int scale = std::max(1, full_hole.h / th);
  const int r = std::max(1, (full_radius + scale / 2) / scale);
  Mask hole_bin = binarize05(hole);
  Mask dil = dilate_mask(hole_bin, 2 * r + 1, 1);
  Mask ring(th, tw);
  for (size_t i = 0; i < ring.v.size(); ++i)
    ring.v[i] = std::max(0.0f, dil.v[i] - hole.v[i]);
  return {std::move(hole), std::move(ring)};
}

}  // namespace

MaskPyramid build_mask_pyramid(const std::vector<const Mask*>& holes, const DilateConfig& cfg) {
  if (holes.empty()) throw ImageError("build_mask_pyramid: empty batch");
  const int H = holes[0]->h, W = holes[0]->w;
  const int qh = H / 4, qw = W / 4, hh = H / 2, hw = W / 2;
  Tensor hq({static_cast<int>(holes.size()), 1, qh, qw});
  Tensor rq({static_cast<int>(holes.size()), 1, qh, qw});
  Tensor hh2({static_cast<int>(holes.size()), 1, hh, hw});
  Tensor rh2({static_cast<int>(holes.size()), 1, hh, hw});
  MaskPyramid py;
  for (size_t n = 0; n < holes.size(); ++n) {
    if (holes[n]->sum() > 0.0) py.any_hole = true;
    auto [h4, r4] = level_masks(*holes[n], qh, qw, cfg.radius());
    auto [h2, r2] = level_masks(*holes[n], hh, hw, cfg.radius());
    std::copy(h4.v.begin(), h4.v.end(), hq.data() + n * static_cast<size_t>(qh) * qw);
    std::copy(r4.v.begin(), r4.v.end(), rq.data() + n * static_cast<size_t>(qh) * qw);
    std::copy(h2.v.begin(), h2.v.end(), hh2.data() + n * static_cast<size_t>(hh) * hw);
    std::copy(r2.v.begin(), r2.v.end(), rh2.data() + n * static_cast<size_t>(hh) * hw);
  }
  py.hole_q = nn::constant(std::move(hq));
  py.ring_q = nn::constant(std::move(rq));
  py.hole_h = nn::constant(std::move(hh2));
  py.ring_h = nn::constant(std::move(rh2));
  return py;
}

InpaintDecoder::InpaintDecoder(Rng& rng, bool with_image_skip, float epsilon)
    : with_image_skip_(with_image_skip) {
  const int in_ch = 256 + (with_image_skip ? 3 : 0);
  const int chans[8] = {128, 128, 256, 256, 128, 128, 64, 3};
  int c = in_ch;
  for (int i = 0; i < 8; ++i) {
    blocks_.emplace_back(c, chans[i], rng, epsilon);
    c = chans[i];
  }
  out_conv_ = nn::Conv2d(3, 3, 3, 1, 1, rng);
}

Var InpaintDecoder::forward(const Var& features, const Var& adv, const MaskPyramid& masks,
                            bool* ring_was_empty) const {
  const auto& fs = features.shape();
  if (fs.size() != 4 || fs[1] != 256)
    throw ImageError("inpaint: expected 256-channel encoder features, got " +
                     Tensor::shape_str(fs));
  const auto& as = adv.shape();
  if (as[2] != fs[2] * 4 || as[3] != fs[3] * 4)
    throw ImageError("inpaint: image/feature resolution mismatch");
  // a mask that covers the whole image leaves no context to normalize from
  {
    const Tensor& hq = masks.hole_q.value();
    const float* p = hq.data();
    const int64_t plane = static_cast<int64_t>(hq.shape()[2]) * hq.shape()[3];
    for (int n = 0; n < hq.shape()[0]; ++n) {
      bool all_one = plane > 0;
      for (int64_t i = 0; i < plane && all_one; ++i) all_one = p[n * plane + i] >= 0.5f;
      if (all_one)
        throw ImageError("inpaint: mask covers the entire image for sample " + std::to_string(n) +
                         ", no clean context available");
    }
  }

  Var h = features;
  if (with_image_skip_) {
    // nearest-downsampled masked image joins the first block's input
    const int N = as[0], qh = fs[2], qw = fs[3];
    Tensor ds({N, 3, qh, qw});
    const float* ap = adv.value().data();
    const float* hp = masks.hole_q.value().data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < qh; ++i)
          for (int j = 0; j < qw; ++j) {
            const int si = std::min(as[2] - 1, i * 4 + 2), sj = std::min(as[3] - 1, j * 4 + 2);
            const float keep =
                1.0f - hp[(static_cast<int64_t>(n) * qh + i) * qw + j];
            ds.at(n, c, i, j) =
                keep * ap[((static_cast<int64_t>(n) * 3 + c) * as[2] + si) * as[3] + sj];
          }
    h = nn::concat_channels({h, nn::constant(std::move(ds))});
  }
  bool warned = false;
  for (int i = 0; i < 4; ++i) {
    bool w = false;
    h = blocks_[static_cast<size_t>(i)].forward(h, masks.hole_q, masks.ring_q, &w);
    warned = warned || w;
  }
  h = nn::upsample_nearest2(h);
  for (int i = 4; i < 8; ++i) {
    bool w = false;
    h = blocks_[static_cast<size_t>(i)].forward(h, masks.hole_h, masks.ring_h, &w);
    warned = warned || w;
  }
  h = nn::upsample_nearest2(h);
  Var y = nn::tanh_act(out_conv_.forward(h));
  if (ring_was_empty) *ring_was_empty = warned && masks.any_hole;
  return nn::mul_scalar(nn::add_scalar(y, 1.0f), 0.5f);  // tanh output back to [0,1]
}

void InpaintDecoder::params(nn::ParamMap& m, const std::string& prefix) {
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].params(m, prefix + ".pcn" + std::to_string(i + 1));
  out_conv_.params(m, prefix + ".out");
}

Image composite(const Image& x_hat, const Image& x_adv, const Mask& m_hat) {
  // same algebra as compose_mask with the adversarial image as base
  return compose_mask(x_adv, x_hat, m_hat);
}

Var composite_graph(const Var& x_hat, const Var& x_adv, const Var& m_hat) {
  Var keep = nn::add_scalar(nn::mul_scalar(m_hat, -1.0f), 1.0f);
  return nn::add(nn::mul(x_hat, m_hat), nn::mul(x_adv, keep));
}

}  // namespace patchdef
