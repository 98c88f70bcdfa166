#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "patchdef/inpainter.hpp"
#include "patchdef/localizer.hpp"
#include "patchdef/losses.hpp"
#include "patchdef/serialize.hpp"
#include "patchdef/victim.hpp"

namespace patchdef {

struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

struct DefenseConfig {
  int image_size = 64;
  std::vector<int> stage_epochs = {5, 5, 5, 5};
  float lr = 2e-4f;  // halved at each stage boundary
  int batch_size = 4;
  uint64_t seed = 23;
  DilateConfig dilate;  // kernel 7, rate 2
  float tau = 0.5f;
  int fuse_close_kernel = 3;
  int edge_thickness_base = 2;  // ground-truth edge width at 256px, scaled
  bool mask_straight_through = false;
  bool l1_hole_only = false;
  bool feed_masked_image = true;
  float pcn_epsilon = 1e-5f;
  int val_subset = 250;
  bool cache_frozen_features = true;
  LossWeights weights;

  int edge_thickness() const {
    return std::max(1, (edge_thickness_base * image_size + 128) / 256);
  }
};

/// All defense parameter sets. Copies alias the underlying parameters (shared
/// graph nodes); deep copies come from checkpoint round-trips.
struct DefenseModels {
  Encoder enc;      // E: shared encoder of the final pipeline
  Encoder aux_enc;  // E': auxiliary encoder trained in stage 1
  MaskDecoder region_dec, edge_dec;
  InpaintDecoder pri_dec;
  Discriminator disc;
  int stage_completed = 0;

  static DefenseModels init(const DefenseConfig& cfg, uint64_t seed);

  /// Stable group names: encoder, aux_encoder, region_decoder, edge_decoder,
  /// inpaint_decoder, discriminator.
  std::map<std::string, nn::ParamMap> groups();
  std::map<std::string, uint64_t> group_hashes();

  nn::Checkpoint to_checkpoint(const DefenseConfig& cfg, const std::string& rng_state,
                               int epoch_global) const;
  static DefenseModels from_checkpoint(const nn::Checkpoint& ck, const DefenseConfig& cfg);
};

struct StagePlan {
  int stage = 1;
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
  enum class Loss { Prl, Pri } loss = Loss::Prl;
  int epochs = 5;

  static StagePlan standard(int stage, int epochs);
};

/// Paired training sample: adversarial image, its clean counterpart, the
/// ground-truth patch mask and the class label.
struct DefenseSample {
  Image adv;
  Image clean;
  Mask gt_mask;
  int label = -1;
};

struct DefenseDataset {
  std::vector<DefenseSample> train, val;
};

/// Pairs an attacked dataset with its clean source by relative path. Throws
/// when a pairing or mask is missing.
DefenseDataset load_defense_dataset(const std::filesystem::path& clean_root,
                                    const std::filesystem::path& attacked_root);

struct EpochRecord {
  int stage = 0;
  int epoch_global = 0;  // 1-based across all stages
  double train_loss = 0.0;
  double val_defended_acc = 0.0;
};

struct TrainerIO {
  std::filesystem::path records_path;   // newline-delimited JSON, appended
  std::filesystem::path checkpoint_dir;  // per-epoch checkpoints; empty = none
  std::function<void(const std::string&)> log;
  std::string config_hash;
};

/// Runs one stage of the schedule. Respects the freeze contract (frozen
/// groups receive zero updates), alternates discriminator updates 1:1 in the
/// generator-adversarial stages, aborts with a diagnostic dump on NaN loss.
/// resume_optim, when non-empty, seeds the stage optimizers (mid-stage resume).
void run_stage(const StagePlan& plan, const DefenseDataset& data, DefenseModels& models,
               const DefenseConfig& cfg, const FeatureExtractor& extractor,
               const VictimClassifier& victim, TrainerIO& io, Rng& rng, int* epoch_global,
               std::vector<EpochRecord>* curve,
               const std::map<std::string, nn::Adam::State>* resume_optim = nullptr);

struct TrainDefenseResult {
  std::vector<EpochRecord> curve;
  int best_epoch = 0;  // 1-based global epoch of the selected checkpoint
  double best_val_acc = 0.0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
};

/// Runs stages 1..4 (optionally resuming from the latest epoch checkpoint in
/// io.checkpoint_dir) and selects the epoch checkpoint with the best defended
/// validation accuracy.
TrainDefenseResult train_defense(const DefenseDataset& data, const DefenseConfig& cfg,
                                 const FeatureExtractor& extractor, const VictimClassifier& victim,
                                 TrainerIO& io, bool resume = false);

int argmax_epoch(const std::vector<EpochRecord>& curve);

}  // namespace patchdef
