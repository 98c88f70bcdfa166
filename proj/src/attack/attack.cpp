#include "patchdef/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "patchdef/dataset.hpp"

namespace patchdef {

void AttackConfig::validate(int num_classes) const {
  if (occupancy <= 0.0 || occupancy > 0.2)
    throw ImageError("attack config: occupancy must be in (0, 0.2]");
  if (iterations < 0) throw ImageError("attack config: negative iteration count");
  if (step_size <= 0.0f) throw ImageError("attack config: step size must be positive");
  if (targeted && (target_class < 0 || target_class >= num_classes))
    throw ImageError("attack config: targeted attack needs a valid target class");
  if (scale_min <= 0.0f || scale_max < scale_min)
    throw ImageError("attack config: bad scale range");
}

PatchSpec random_patch(double occupancy, int img_h, int img_w, Rng& rng) {
  const int side = patch_side_for_occupancy(occupancy, img_h, img_w);
  if (side < 1) throw ImageError("random_patch: occupancy too small for image size");
  const double achieved = static_cast<double>(side) * side / (static_cast<double>(img_h) * img_w);
  if (std::fabs(achieved - occupancy) > 0.005)
    throw ImageError("random_patch: achievable occupancy deviates more than 0.5 points");
  PatchSpec p;
  p.ph = p.pw = side;
  p.px.resize(static_cast<size_t>(3) * side * side);
  for (auto& v : p.px) v = uniform(rng, 0.0f, 1.0f);
  return p;
}

PatchSpec sample_placement(const PatchSpec& patch, int img_h, int img_w, const AttackConfig& cfg,
                           Rng& rng) {
  PatchSpec spec = patch;
  if (cfg.random_transforms) {
    spec.tf.rotation_deg = uniform(rng, cfg.rot_min_deg, cfg.rot_max_deg);
    spec.tf.scale = uniform(rng, cfg.scale_min, cfg.scale_max);
  } else {
    spec.tf = PatchTransform{};
  }
  // bounding box of the transformed patch
  int bh = spec.ph, bw = spec.pw;
  if (!spec.tf.is_identity()) {
    const double th = spec.tf.rotation_deg * 3.14159265358979323846 / 180.0;
    const double ca = std::fabs(std::cos(th)), sa = std::fabs(std::sin(th));
    bh = static_cast<int>(std::ceil(spec.tf.scale * (spec.ph * ca + spec.pw * sa)));
    bw = static_cast<int>(std::ceil(spec.tf.scale * (spec.ph * sa + spec.pw * ca)));
  }
  if (bh > img_h || bw > img_w) throw ImageError("sample_placement: patch larger than image");
  spec.row = uniform_int(rng, 0, img_h - bh);
  spec.col = uniform_int(rng, 0, img_w - bw);
  return spec;
}

std::vector<float> gradient_wrt_patch(const std::vector<float>& image_grad,
                                      const PatchFootprint& fp, int ph, int pw) {
  std::vector<float> g(static_cast<size_t>(3) * ph * pw, 0.0f);
  const size_t img_plane = static_cast<size_t>(fp.h) * fp.w;
  const size_t patch_plane = static_cast<size_t>(ph) * pw;
  for (const auto& [ii, pi] : fp.mapping)
    for (int c = 0; c < 3; ++c)
      g[c * patch_plane + static_cast<size_t>(pi)] +=
          image_grad[c * img_plane + static_cast<size_t>(ii)];
  return g;
}

namespace {

double mean_logp(const VictimClassifier& model, const std::vector<const Image*>& xs,
                 const std::vector<int>& cls) {
  auto probs = model.forward_batch(xs);
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i)
    acc += std::log(std::max(1e-12, static_cast<double>(probs[i][cls[i]])));
  return acc / static_cast<double>(xs.size());
}

/// Shared ascent loop. In per-image mode the placement is drawn once and the
/// forward pass is optionally routed through a defense (the adaptive-attack
/// path); the backward pass always treats the defense as identity.
PatchSpec run_patch_ascent(const VictimClassifier& model, const std::vector<Image>& images,
                           const AttackConfig& cfg, const DefenseFn* defense, AttackTrace* trace) {
  if (images.empty()) throw ImageError("optimize_patch: empty image list");
  if (!model.has_gradient())
    throw ImageError("optimize_patch: model does not expose gradients (required)");
  cfg.validate(model.num_classes());
  const int H = images[0].h, W = images[0].w;
  Rng rng(cfg.seed);
  PatchSpec patch = random_patch(cfg.occupancy, H, W, rng);
  const float dir = cfg.targeted ? 1.0f : -1.0f;

  std::optional<PatchSpec> fixed_spec;
  if (cfg.per_image) {
    if (images.size() != 1) throw ImageError("optimize_patch: per-image mode needs one image");
    fixed_spec = sample_placement(patch, H, W, cfg, rng);
  }

  const size_t patch_plane = static_cast<size_t>(patch.ph) * patch.pw;
  for (int it = 0; it < cfg.iterations; ++it) {
    // assemble the minibatch of patched images
    std::vector<size_t> idx;
    if (cfg.per_image) {
      idx = {0};
    } else {
      const int bs = std::min<int>(cfg.batch_size, static_cast<int>(images.size()));
      for (int i = 0; i < bs; ++i)
        idx.push_back(static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(images.size()) - 1)));
    }
    std::vector<Image> patched;
    std::vector<PatchFootprint> fps;
    std::vector<int> cls;
    patched.reserve(idx.size());
    for (size_t i : idx) {
      PatchSpec spec;
      if (fixed_spec) {
        spec = *fixed_spec;
      } else {
        spec = sample_placement(patch, H, W, cfg, rng);
      }
      spec.px = patch.px;
      auto [img, mask] = apply_patch(images[i], spec);
      fps.push_back(patch_footprint(spec, H, W));
      patched.push_back(std::move(img));
      cls.push_back(cfg.targeted ? cfg.target_class : images[i].label);
    }
    std::vector<const Image*> fwd_ptrs;
    std::vector<Image> defended;
    if (defense && *defense) {
      defended.reserve(patched.size());
      for (const auto& im : patched) defended.push_back((*defense)(im));
      for (const auto& im : defended) fwd_ptrs.push_back(&im);
    } else {
      for (const auto& im : patched) fwd_ptrs.push_back(&im);
    }
    if (trace) {
      const double obj = mean_logp(model, fwd_ptrs, cls);
      trace->objective.push_back(cfg.targeted ? obj : -obj);
    }
    auto grads = model.logp_gradient_batch(fwd_ptrs, cls);
    std::vector<float> g(3 * patch_plane, 0.0f);
    for (size_t i = 0; i < grads.size(); ++i) {
      auto gi = gradient_wrt_patch(grads[i], fps[i], patch.ph, patch.pw);
      for (size_t j = 0; j < g.size(); ++j) g[j] += gi[j];
    }
    const float inv = 1.0f / static_cast<float>(grads.size());
    for (size_t j = 0; j < g.size(); ++j) {
      const float step = g[j] * inv;
      const float s = step > 0.0f ? 1.0f : (step < 0.0f ? -1.0f : 0.0f);
      patch.px[j] = std::clamp(patch.px[j] + cfg.step_size * dir * s, 0.0f, 1.0f);
    }
  }
  if (fixed_spec) {
    fixed_spec->px = patch.px;
    return *fixed_spec;
  }
  // universal patch: placement is sampled per use, report a centered default
  patch.row = (H - patch.ph) / 2;
  patch.col = (W - patch.pw) / 2;
  return patch;
}

}  // namespace

PatchSpec optimize_patch(const VictimClassifier& model, const std::vector<Image>& images,
                         const AttackConfig& cfg, AttackTrace* trace) {
  return run_patch_ascent(model, images, cfg, nullptr, trace);
}

PatchSpec sticker_location_search(const VictimClassifier& model, const Image& image,
                                  const PatchSpec& sticker, int budget, uint64_t seed,
                                  std::vector<PatchSpec>* evaluated) {
  if (budget < 1) throw ImageError("sticker_location_search: budget must be >= 1");
  if (sticker.ph > image.h || sticker.pw > image.w)
    throw ImageError("sticker_location_search: sticker larger than image");
  const int stride = std::max(1, sticker.ph / 2);
  std::vector<PatchSpec> candidates;
  for (int r = 0; r + sticker.ph <= image.h && static_cast<int>(candidates.size()) < budget;
       r += stride)
    for (int c = 0; c + sticker.pw <= image.w && static_cast<int>(candidates.size()) < budget;
         c += stride) {
      PatchSpec s = sticker;
      s.tf = PatchTransform{};
      s.row = r;
      s.col = c;
      candidates.push_back(std::move(s));
    }
  Rng rng(seed);
  while (static_cast<int>(candidates.size()) < budget) {
    PatchSpec s = sticker;
    s.tf = PatchTransform{};
    s.row = uniform_int(rng, 0, image.h - sticker.ph);
    s.col = uniform_int(rng, 0, image.w - sticker.pw);
    candidates.push_back(std::move(s));
  }
  double best_prob = std::numeric_limits<double>::infinity();
  size_t best = 0;
  constexpr size_t kChunk = 64;
  for (size_t off = 0; off < candidates.size(); off += kChunk) {
    const size_t end = std::min(candidates.size(), off + kChunk);
    std::vector<Image> patched;
    for (size_t i = off; i < end; ++i) patched.push_back(apply_patch(image, candidates[i]).first);
    std::vector<const Image*> ptrs;
    for (const auto& im : patched) ptrs.push_back(&im);
    auto probs = model.forward_batch(ptrs);
    for (size_t i = off; i < end; ++i) {
      const double p = probs[i - off][static_cast<size_t>(image.label)];
      if (p < best_prob) {
        best_prob = p;
        best = i;
      }
    }
  }
  if (evaluated) *evaluated = candidates;
  return candidates[best];
}

Image bpda_attack(const VictimClassifier& model, const DefenseFn& defense, const Image& image,
                  const AttackConfig& cfg, Mask* out_mask, AttackTrace* trace) {
  AttackConfig pc = cfg;
  pc.per_image = true;
  PatchSpec spec = run_patch_ascent(model, {image}, pc, &defense, trace);
  auto [attacked, mask] = apply_patch(image, spec);
  attacked.label = image.label;
  if (out_mask) *out_mask = std::move(mask);
  return attacked;
}

}  // namespace patchdef
