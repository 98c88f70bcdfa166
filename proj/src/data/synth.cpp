#include "patchdef/synth.hpp"

#include <algorithm>
#include <cmath>

#include "patchdef/dataset.hpp"

namespace patchdef {

namespace {

struct Rgb {
  float r, g, b;
};

// fixed, well-separated base colors per class
const Rgb kClassColors[10] = {
    {0.85f, 0.15f, 0.15f}, {0.15f, 0.25f, 0.85f}, {0.90f, 0.85f, 0.15f}, {0.15f, 0.70f, 0.25f},
    {0.95f, 0.55f, 0.10f}, {0.55f, 0.20f, 0.75f}, {0.10f, 0.75f, 0.80f}, {0.85f, 0.25f, 0.60f},
    {0.55f, 0.35f, 0.15f}, {0.25f, 0.45f, 0.45f}};

// glyph membership test in unit coordinates relative to center, radius 1
bool inside_glyph(int cls, float x, float y, float rot) {
  const float ca = std::cos(rot), sa = std::sin(rot);
  const float u = ca * x + sa * y;
  const float v = -sa * x + ca * y;
  const float ax = std::fabs(u), ay = std::fabs(v);
  switch (cls) {
    case 0:
      return u * u + v * v <= 1.0f;  // disc
    case 1:
      return ax <= 0.85f && ay <= 0.85f;  // square
    case 2:  // up triangle
      return v <= 0.75f && v >= -0.75f && ax <= (0.75f - v) * 0.65f;
    case 3:
      return ax + ay <= 1.1f;  // diamond
    case 4: {                  // ring
      const float d2 = u * u + v * v;
      return d2 <= 1.0f && d2 >= 0.36f;
    }
    case 5:
      return (ax <= 0.3f && ay <= 0.95f) || (ay <= 0.3f && ax <= 0.95f);  // plus
    case 6: {                                                             // X
      const float du = std::fabs(u - v) * 0.7071f, dv = std::fabs(u + v) * 0.7071f;
      return (du <= 0.25f && dv <= 0.95f) || (dv <= 0.25f && du <= 0.95f);
    }
    case 7:  // two horizontal bars
      return ax <= 0.9f && (std::fabs(v - 0.45f) <= 0.22f || std::fabs(v + 0.45f) <= 0.22f);
    case 8:  // hollow square frame
      return (ax <= 0.9f && ay <= 0.9f) && !(ax <= 0.5f && ay <= 0.5f);
    case 9:  // two vertical bars
      return ay <= 0.9f && (std::fabs(u - 0.45f) <= 0.22f || std::fabs(u + 0.45f) <= 0.22f);
    default:
      return false;
  }
}

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

}  // namespace

Image render_sign(const SynthConfig& cfg, int split_id, int class_id, int index) {
  if (class_id < 0 || class_id >= std::min(cfg.num_classes, 10))
    throw ImageError("render_sign: class id outside glyph set");
  const int S = cfg.image_size;
  Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(split_id),
                   static_cast<uint64_t>(class_id) * 1000003ULL + static_cast<uint64_t>(index)));

  // background: smooth two-color gradient plus a low-frequency sinusoid
  const Rgb bg_a{uniform(rng, 0.25f, 0.75f), uniform(rng, 0.25f, 0.75f),
                 uniform(rng, 0.25f, 0.75f)};
  const Rgb bg_b{uniform(rng, 0.25f, 0.75f), uniform(rng, 0.25f, 0.75f),
                 uniform(rng, 0.25f, 0.75f)};
  const float gdir = uniform(rng, 0.0f, 6.2831853f);
  const float gx = std::cos(gdir), gy = std::sin(gdir);
  const float tex_freq = uniform(rng, 2.0f, 5.0f);
  const float tex_phase = uniform(rng, 0.0f, 6.2831853f);
  const float tex_amp = uniform(rng, 0.02f, 0.06f);

  // glyph placement
  const float cx = S * (0.5f + uniform(rng, -0.08f, 0.08f));
  const float cy = S * (0.5f + uniform(rng, -0.08f, 0.08f));
  const float radius = S * uniform(rng, 0.28f, 0.38f);
  const float rot = uniform(rng, -0.18f, 0.18f);
  const Rgb base = kClassColors[class_id];
  const Rgb color{clamp01(base.r + uniform(rng, -0.08f, 0.08f)),
                  clamp01(base.g + uniform(rng, -0.08f, 0.08f)),
                  clamp01(base.b + uniform(rng, -0.08f, 0.08f))};

  Image img(S, S);
  img.label = class_id;
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j) {
      const float t = 0.5f + 0.5f * ((j / static_cast<float>(S) - 0.5f) * gx +
                                     (i / static_cast<float>(S) - 0.5f) * gy);
      const float tex =
          tex_amp * std::sin(tex_freq * 6.2831853f * (i + j) / (2.0f * S) + tex_phase);
      float r = clamp01(bg_a.r * (1 - t) + bg_b.r * t + tex);
      float g = clamp01(bg_a.g * (1 - t) + bg_b.g * t + tex);
      float b = clamp01(bg_a.b * (1 - t) + bg_b.b * t + tex);
      // 2x2 supersampled coverage for soft edges
      float cov = 0.0f;
      for (int si = 0; si < 2; ++si)
        for (int sj = 0; sj < 2; ++sj) {
          const float y = (i + 0.25f + 0.5f * si - cy) / radius;
          const float x = (j + 0.25f + 0.5f * sj - cx) / radius;
          if (inside_glyph(class_id, x, y, rot)) cov += 0.25f;
        }
      if (cov > 0.0f) {
        r = r * (1 - cov) + color.r * cov;
        g = g * (1 - cov) + color.g * cov;
        b = b * (1 - cov) + color.b * cov;
      }
      img.at(0, i, j) = r;
      img.at(1, i, j) = g;
      img.at(2, i, j) = b;
    }
  return img;
}

GenStats generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& root) {
  if (cfg.num_classes < 2 || cfg.num_classes > 10)
    throw ImageError("generate_synthetic: num_classes must be in [2,10]");
  const struct {
    const char* name;
    int id;
    int per_class;
  } splits[3] = {{"train", 0, cfg.train_per_class},
                 {"val", 1, cfg.val_per_class},
                 {"test", 2, cfg.test_per_class}};
  GenStats stats;
  char name[32];
  for (const auto& sp : splits) {
    int count = 0;
    for (int cls = 0; cls < cfg.num_classes; ++cls)
      for (int idx = 0; idx < sp.per_class; ++idx) {
        Image img = render_sign(cfg, sp.id, cls, idx);
        std::snprintf(name, sizeof(name), "img_%05d.png", idx);
        save_png(root / sp.name / std::to_string(cls) / name, img);
        ++count;
      }
    stats.per_split_count[sp.name] = count;
  }
  return stats;
}

}  // namespace patchdef
