#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "patchdef/attack.hpp"
#include "patchdef/report.hpp"
#include "patchdef/synth.hpp"
#include "patchdef/train.hpp"

namespace patchdef {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Resolved run configuration. Parsed from a JSON file with strict schema
/// validation (unknown keys are rejected, naming their path); single keys can
/// be overridden from the command line with key.path=value pairs.
struct PipelineConfig {
  // dataset
  std::string dataset_kind = "synthetic";  // synthetic | ingested
  std::filesystem::path dataset_root = "data/clean";
  SynthConfig synth;
  std::filesystem::path ingest_src;
  int ingest_min_side = 90;

  // victim
  int victim_epochs = 10;
  int victim_batch = 32;
  float victim_lr = 1e-3f;
  uint64_t victim_seed = 7;
  std::filesystem::path victim_path = "runs/victim.ckpt";

  // attack
  std::string attack_type = "universal";  // universal | per_image | sticker | bpda
  AttackConfig attack;
  std::filesystem::path attacked_root = "data/attacked";
  std::vector<std::string> attack_splits = {"train", "val", "test"};
  int sticker_budget = 64;
  int bpda_subset = 100;
  std::filesystem::path bpda_defense_checkpoint;

  // defense
  DefenseConfig defense;
  std::filesystem::path defense_dir = "runs/defense";

  // defend
  std::string defend_variant = "full";
  std::string defend_split = "test";
  std::filesystem::path defended_root = "data/defended";
  std::filesystem::path defend_checkpoint;  // empty: defense_dir/checkpoints/best.ckpt
  std::filesystem::path defend_input_root;  // empty: attacked_root

  // eval / report
  std::vector<ReportCondition> conditions;
  std::filesystem::path report_dir = "runs/report";
  uint64_t eval_seed = 31;

  std::string config_hash;  // of the resolved content

  static PipelineConfig defaults();
  static PipelineConfig from_file(const std::filesystem::path& path,
                                  const std::vector<std::string>& overrides = {});
  static PipelineConfig from_json_text(const std::string& text,
                                       const std::vector<std::string>& overrides = {});

  std::string to_json_text() const;
  void write_resolved(const std::filesystem::path& dir) const;
};

}  // namespace patchdef
