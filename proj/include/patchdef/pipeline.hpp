#pragma once

#include <filesystem>

#include "patchdef/attack.hpp"
#include "patchdef/train.hpp"

namespace patchdef {

struct DefendResult {
  Image recovered;
  Mask predicted_mask;  // binary, fused
  Mask region_soft;
  Mask edge_soft;
  bool ring_warning = false;
};

/// Inference assembly of the defense. Checkpoints from stages 1-2 still route
/// the mask branches through the auxiliary encoder; from stage 3 on the shared
/// encoder drives both localization and inpainting.
class DefensePipeline {
 public:
  enum class Variant { Full, NoInpaint, NoDilation, NoRegion };

  DefensePipeline(DefenseModels models, DefenseConfig cfg);
  DefensePipeline(DefenseModels models, DefenseConfig cfg, bool masks_from_aux);
  static DefensePipeline load(const std::filesystem::path& checkpoint);

  std::vector<DefendResult> defend_batch(const std::vector<const Image*>& xs) const;
  DefendResult defend(const Image& x) const;

  /// Defense as a plain image map (the adaptive attack's forward function).
  DefenseFn as_fn() const;

  void set_variant(Variant v) { variant_ = v; }
  Variant variant() const { return variant_; }
  const DefenseConfig& config() const { return cfg_; }
  int stage_tag() const { return models_.stage_completed; }

 private:
  mutable DefenseModels models_;
  DefenseConfig cfg_;
  Variant variant_ = Variant::Full;
  bool masks_from_aux_ = false;
};

DefensePipeline::Variant variant_from_string(const std::string& s);

}  // namespace patchdef
