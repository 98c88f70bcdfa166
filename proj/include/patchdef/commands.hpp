#pragma once

#include <functional>
#include <string>

#include "patchdef/config.hpp"

namespace patchdef {

using LogFn = std::function<void(const std::string&)>;

/// Pipeline commands. Each validates its config subsection and prerequisite
/// artifacts, writes its resolved config next to its outputs and returns a
/// process exit code (0 on success).
int cmd_gen_data(const PipelineConfig& cfg, bool dry_run, const LogFn& log);
int cmd_train_victim(const PipelineConfig& cfg, bool dry_run, const LogFn& log);
int cmd_attack(const PipelineConfig& cfg, bool dry_run, const LogFn& log);
int cmd_train_defense(const PipelineConfig& cfg, bool dry_run, bool resume, const LogFn& log);
int cmd_defend(const PipelineConfig& cfg, bool dry_run, const LogFn& log);
int cmd_evaluate(const PipelineConfig& cfg, bool dry_run, const LogFn& log);
int cmd_report(const PipelineConfig& cfg, bool dry_run, const LogFn& log);

int run_command(const std::string& name, const PipelineConfig& cfg, bool dry_run, bool resume,
                const LogFn& log);

/// Applies the universal patch at seeded per-image placements and writes the
/// attacked split (images + ground-truth masks). Returns (clean, attacked)
/// accuracy under the given victim.
struct AttackSplitStats {
  double clean_acc = 0.0, attacked_acc = 0.0;
  int count = 0;
};
AttackSplitStats write_attacked_split(const std::filesystem::path& clean_root,
                                      const std::string& split,
                                      const std::filesystem::path& out_root,
                                      const VictimClassifier& victim, const PatchSpec& patch,
                                      const AttackConfig& cfg);

}  // namespace patchdef
