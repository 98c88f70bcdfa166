#include "patchdef/pipeline.hpp"

#include <algorithm>

namespace patchdef {

using nn::Tensor;
using nn::Var;

DefensePipeline::DefensePipeline(DefenseModels models, DefenseConfig cfg)
    : models_(std::move(models)), cfg_(std::move(cfg)) {
  masks_from_aux_ = models_.stage_completed <= 2;
}

DefensePipeline::DefensePipeline(DefenseModels models, DefenseConfig cfg, bool masks_from_aux)
    : models_(std::move(models)), cfg_(std::move(cfg)), masks_from_aux_(masks_from_aux) {}

DefensePipeline DefensePipeline::load(const std::filesystem::path& checkpoint) {
  nn::Checkpoint ck = nn::Checkpoint::load(checkpoint);
  DefenseConfig cfg;
  cfg.image_size = static_cast<int>(ck.scalars.at("image_size"));
  cfg.dilate.kernel = static_cast<int>(ck.scalars.at("dilate_kernel"));
  cfg.dilate.rate = static_cast<int>(ck.scalars.at("dilate_rate"));
  cfg.tau = static_cast<float>(ck.scalars.at("tau"));
  cfg.fuse_close_kernel = static_cast<int>(ck.scalars.at("fuse_close_kernel"));
  cfg.feed_masked_image = ck.scalars.at("feed_masked_image") != 0.0;
  cfg.pcn_epsilon = static_cast<float>(ck.scalars.at("pcn_epsilon"));
  // mid-stage checkpoints pair the mask decoders with whichever encoder the
  // in-progress stage feeds them from
  const int stage_hint = ck.scalars.count("stage_in_progress")
                             ? static_cast<int>(ck.scalars.at("stage_in_progress"))
                             : ck.stage;
  DefenseModels models = DefenseModels::from_checkpoint(ck, cfg);
  return DefensePipeline(std::move(models), std::move(cfg), stage_hint <= 2);
}

std::vector<DefendResult> DefensePipeline::defend_batch(
    const std::vector<const Image*>& xs) const {
  if (xs.empty()) return {};
  for (const auto* x : xs)
    if (x->h != cfg_.image_size || x->w != cfg_.image_size)
      throw ImageError("defend: image size does not match pipeline configuration");

  const Encoder& mask_enc = masks_from_aux_ ? models_.aux_enc : models_.enc;
  Var x(ConvNetVictim::batch_tensor(xs));
  Var f_mask = mask_enc.forward(x);
  Var region = models_.region_dec.forward(f_mask);
  Var edge = models_.edge_dec.forward(f_mask);

  std::vector<DefendResult> out(xs.size());
  FuseConfig fuse_cfg{cfg_.tau, cfg_.fuse_close_kernel};
  std::vector<Mask> fused(xs.size());
  for (size_t n = 0; n < xs.size(); ++n) {
    out[n].region_soft = mask_from_tensor(region.value(), static_cast<int>(n));
    out[n].edge_soft = mask_from_tensor(edge.value(), static_cast<int>(n));
    if (variant_ == Variant::NoRegion) {
      Mask empty(out[n].region_soft.h, out[n].region_soft.w);
      fused[n] = fuse_masks(empty, out[n].edge_soft, fuse_cfg);
    } else {
      fused[n] = fuse_masks(out[n].region_soft, out[n].edge_soft, fuse_cfg);
    }
    out[n].predicted_mask = fused[n];
  }

  if (variant_ == Variant::NoInpaint) {
    // remove-only ablation: black out the detected region
    for (size_t n = 0; n < xs.size(); ++n) {
      Image black(xs[n]->h, xs[n]->w);
      out[n].recovered = composite(black, *xs[n], fused[n]);
      out[n].recovered.label = xs[n]->label;
    }
    return out;
  }

  std::vector<const Mask*> mask_ptrs;
  for (size_t n = 0; n < fused.size(); ++n) {
    // degenerate prediction with no surrounding context: decline to inpaint
    if (mask_leaves_no_context(fused[n])) {
      for (auto& v : fused[n].v) v = 0.0f;
      out[n].predicted_mask = fused[n];
      out[n].ring_warning = true;
    }
    mask_ptrs.push_back(&fused[n]);
  }
  MaskPyramid py = build_mask_pyramid(mask_ptrs, cfg_.dilate);
  if (variant_ == Variant::NoDilation) {
    // context = everything outside the hole rather than the surrounding ring
    auto whole = [](const Var& hole) {
      Tensor t(hole.value().shape());
      const float* h = hole.value().data();
      for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 1.0f - h[i];
      return nn::constant(std::move(t));
    };
    py.ring_q = whole(py.hole_q);
    py.ring_h = whole(py.hole_h);
  }
  Var f_pri = (&mask_enc == &models_.enc) ? f_mask : models_.enc.forward(x);
  bool ring_warn = false;
  Var x_hat = models_.pri_dec.forward(f_pri, x, py, &ring_warn);
  for (size_t n = 0; n < xs.size(); ++n) {
    Image rec(xs[n]->h, xs[n]->w);
    const float* p = x_hat.value().data() +
                     static_cast<int64_t>(n) * 3 * xs[n]->h * xs[n]->w;
    std::copy(p, p + rec.px.size(), rec.px.begin());
    for (auto& v : rec.px) v = std::clamp(v, 0.0f, 1.0f);
    out[n].recovered = composite(rec, *xs[n], fused[n]);
    out[n].recovered.label = xs[n]->label;
    out[n].ring_warning = ring_warn;
  }
  return out;
}

DefendResult DefensePipeline::defend(const Image& x) const { return defend_batch({&x})[0]; }

DefenseFn DefensePipeline::as_fn() const {
  return [this](const Image& x) { return defend(x).recovered; };
}

DefensePipeline::Variant variant_from_string(const std::string& s) {
  if (s == "full") return DefensePipeline::Variant::Full;
  if (s == "no_inpaint") return DefensePipeline::Variant::NoInpaint;
  if (s == "no_dilation") return DefensePipeline::Variant::NoDilation;
  if (s == "no_region") return DefensePipeline::Variant::NoRegion;
  throw std::invalid_argument("unknown defense variant: " + s);
}

}  // namespace patchdef
