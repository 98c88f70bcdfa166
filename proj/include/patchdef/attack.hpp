#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "patchdef/image.hpp"
#include "patchdef/victim.hpp"

namespace patchdef {

struct AttackConfig {
  double occupancy = 0.05;  // patch area fraction, in (0, 0.2]
  int iterations = 100;
  float step_size = 0.05f;
  bool targeted = false;
  int target_class = -1;
  bool per_image = false;  // single-image patch with a fixed random location
  uint64_t seed = 11;
  int batch_size = 32;
  // transform distribution for universal-patch training and placement
  float rot_min_deg = -20.0f, rot_max_deg = 20.0f;
  float scale_min = 0.9f, scale_max = 1.1f;
  bool random_transforms = true;

  void validate(int num_classes) const;
};

/// Objective trace of an optimization run; entry i is the minibatch objective
/// before step i (log-probability being maximized).
struct AttackTrace {
  std::vector<double> objective;
};

/// Projected gradient ascent on the patch pixels. Universal mode samples
/// (image, location, transform) minibatches; per-image mode fixes the single
/// image and a randomly drawn location. Throws if the model cannot provide
/// gradients.
PatchSpec optimize_patch(const VictimClassifier& model, const std::vector<Image>& images,
                         const AttackConfig& cfg, AttackTrace* trace = nullptr);

/// Black-box location search for a fixed sticker: a coarse grid (stride =
/// sticker side / 2) followed by uniform random refinement, minimizing the
/// true-class probability. Returns the best placement found within budget.
PatchSpec sticker_location_search(const VictimClassifier& model, const Image& image,
                                  const PatchSpec& sticker, int budget, uint64_t seed,
                                  std::vector<PatchSpec>* evaluated = nullptr);

using DefenseFn = std::function<Image(const Image&)>;

/// Straight-through adaptive attack: the forward pass goes through the
/// defense, the backward pass treats it as identity. Perturbation stays
/// confined to the (randomly placed) patch region; returns the attacked image.
Image bpda_attack(const VictimClassifier& model, const DefenseFn& defense, const Image& image,
                  const AttackConfig& cfg, Mask* out_mask = nullptr, AttackTrace* trace = nullptr);

/// Placement distribution: uniform over locations where the transformed patch
/// fits entirely inside an h x w image.
PatchSpec sample_placement(const PatchSpec& patch, int img_h, int img_w, const AttackConfig& cfg,
                           Rng& rng);

/// Uniform random patch in [0,1] sized to the configured occupancy.
PatchSpec random_patch(double occupancy, int img_h, int img_w, Rng& rng);

/// Pull an image-space gradient back to patch pixels through the paste map.
std::vector<float> gradient_wrt_patch(const std::vector<float>& image_grad,
                                      const PatchFootprint& fp, int ph, int pw);

}  // namespace patchdef
