#include "patchdef/commands.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "patchdef/dataset.hpp"
#include "patchdef/pipeline.hpp"

namespace patchdef {

using json = nlohmann::ordered_json;

namespace {

void require_artifact(const std::filesystem::path& p, const std::string& what,
                      const std::string& producer) {
  if (!std::filesystem::exists(p))
    throw ConfigError(what + " not found at " + p.string() + "; run `patchdef " + producer +
                      "` first");
}

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

PatchSpec make_sticker(int side, uint64_t seed) {
  // deterministic concentric three-color pattern
  PatchSpec s;
  s.ph = s.pw = side;
  s.px.resize(static_cast<size_t>(3) * side * side);
  Rng rng(seed);
  const float base[3] = {uniform(rng, 0.5f, 1.0f), uniform(rng, 0.0f, 0.5f),
                         uniform(rng, 0.2f, 0.9f)};
  const float mid = (side - 1) / 2.0f;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      const float d = std::sqrt((i - mid) * (i - mid) + (j - mid) * (j - mid)) / (mid + 0.5f);
      const int band = std::min(2, static_cast<int>(d * 3.0f));
      for (int c = 0; c < 3; ++c)
        s.at(c, i, j) = std::clamp(band == 0 ? base[c] : band == 1 ? 1.0f - base[c]
                                                                   : base[(c + 1) % 3],
                                   0.0f, 1.0f);
    }
  return s;
}

}  // namespace

AttackSplitStats write_attacked_split(const std::filesystem::path& clean_root,
                                      const std::string& split,
                                      const std::filesystem::path& out_root,
                                      const VictimClassifier& victim, const PatchSpec& patch,
                                      const AttackConfig& cfg) {
  auto refs = list_split(clean_root, split);
  AttackSplitStats stats;
  const uint64_t split_hash = std::hash<std::string>{}(split);
  for (size_t i = 0; i < refs.size(); ++i) {
    Image clean = load_png(refs[i].image_path);
    clean.label = refs[i].label;
    Rng rng(mix_seed(cfg.seed, split_hash, i));
    PatchSpec spec = sample_placement(patch, clean.h, clean.w, cfg, rng);
    auto [attacked, mask] = apply_patch(clean, spec);
    const auto dir = out_root / split / std::to_string(refs[i].label);
    save_png(dir / (refs[i].name + ".png"), attacked);
    save_mask_png(dir / (refs[i].name + ".mask.png"), mask);
    if (victim.predict(clean) == clean.label) stats.clean_acc += 1;
    if (victim.predict(attacked) == clean.label) stats.attacked_acc += 1;
    ++stats.count;
  }
  if (stats.count > 0) {
    stats.clean_acc /= stats.count;
    stats.attacked_acc /= stats.count;
  }
  return stats;
}

int cmd_gen_data(const PipelineConfig& cfg, bool dry_run, const LogFn& log) {
  if (cfg.dataset_kind == "ingested" && cfg.ingest_src.empty())
    throw ConfigError("gen-data: dataset.ingest_src required for ingested datasets");
  if (dry_run) {
    say(log, "gen-data: would write " + cfg.dataset_kind + " dataset to " +
                 cfg.dataset_root.string());
    return 0;
  }
  if (cfg.dataset_kind == "synthetic") {
    GenStats stats = generate_synthetic(cfg.synth, cfg.dataset_root);
    json j;
    j["kind"] = "synthetic";
    j["seed"] = cfg.synth.seed;
    j["counts"] = stats.per_split_count;
    std::filesystem::create_directories(cfg.dataset_root);
    std::ofstream(cfg.dataset_root / "manifest.json") << j.dump(2) << "\n";
    say(log, "gen-data: wrote synthetic dataset to " + cfg.dataset_root.string());
  } else {
    IngestConfig icfg{cfg.synth.image_size, cfg.ingest_min_side};
    bool any_split = false;
    json j;
    j["kind"] = "ingested";
    j["source"] = cfg.ingest_src.string();
    json drops = json::array();
    for (const std::string split : {"train", "val", "test"}) {
      if (!std::filesystem::exists(cfg.ingest_src / split)) continue;
      any_split = true;
      IngestStats s = ingest_folder(cfg.ingest_src / split, cfg.dataset_root, split, icfg);
      j["counts"][split] = s.kept;
      for (const auto& f : s.dropped_files) drops.push_back(f);
    }
    if (!any_split) {
      IngestStats s = ingest_folder(cfg.ingest_src, cfg.dataset_root, "train", icfg);
      j["counts"]["train"] = s.kept;
      for (const auto& f : s.dropped_files) drops.push_back(f);
    }
    j["dropped"] = drops;
    std::ofstream(cfg.dataset_root / "manifest.json") << j.dump(2) << "\n";
    say(log, "gen-data: ingested dataset into " + cfg.dataset_root.string());
  }
  cfg.write_resolved(cfg.dataset_root);
  return 0;
}

int cmd_train_victim(const PipelineConfig& cfg, bool dry_run, const LogFn& log) {
  require_artifact(cfg.dataset_root / "train", "clean training split", "gen-data");
  if (dry_run) {
    say(log, "train-victim: would train on " + cfg.dataset_root.string());
    return 0;
  }
  SplitData train = load_split(cfg.dataset_root, "train");
  const int classes = count_classes(cfg.dataset_root, "train");
  ConvNetVictim victim(cfg.synth.image_size, classes, mix_seed(cfg.victim_seed, 0x76696374ULL));
  auto stats = victim.train(train.images, train.labels, cfg.victim_epochs, cfg.victim_batch,
                            cfg.victim_lr, cfg.victim_seed, log);
  std::filesystem::create_directories(cfg.victim_path.parent_path());
  victim.save(cfg.victim_path);
  double test_acc = -1.0;
  if (std::filesystem::exists(cfg.dataset_root / "test")) {
    SplitData test = load_split(cfg.dataset_root, "test");
    test_acc = top1_accuracy(victim, test.images, test.labels);
  }
  json j;
  j["train_accuracy"] = stats.final_train_acc;
  j["test_accuracy"] = test_acc;
  j["epochs"] = cfg.victim_epochs;
  j["seed"] = cfg.victim_seed;
  std::ofstream(cfg.victim_path.parent_path() / "victim.json") << j.dump(2) << "\n";
  cfg.write_resolved(cfg.victim_path.parent_path());
  say(log, "train-victim: test accuracy " + std::to_string(test_acc));
  return 0;
}

int cmd_attack(const PipelineConfig& cfg, bool dry_run, const LogFn& log) {
  require_artifact(cfg.dataset_root / "train", "clean dataset", "gen-data");
  require_artifact(cfg.victim_path, "victim checkpoint", "train-victim");
  if (cfg.attack_type == "bpda")
    require_artifact(cfg.bpda_defense_checkpoint, "defense checkpoint", "train-defense");
  if (dry_run) {
    say(log, "attack: would write " + cfg.attack_type + " attack to " +
                 cfg.attacked_root.string());
    return 0;
  }
  auto victim = ConvNetVictim::load_file(cfg.victim_path);
  json manifest;
  manifest["type"] = cfg.attack_type;
  manifest["seed"] = cfg.attack.seed;
  manifest["occupancy"] = cfg.attack.occupancy;
  manifest["iterations"] = cfg.attack.iterations;
  manifest["targeted"] = cfg.attack.targeted;

  if (cfg.attack_type == "universal") {
    SplitData train = load_split(cfg.dataset_root, "train");
    AttackTrace trace;
    PatchSpec patch = optimize_patch(*victim, train.images, cfg.attack, &trace);
    manifest["patch_side"] = patch.ph;
    if (!trace.objective.empty()) {
      manifest["objective_first"] = trace.objective.front();
      manifest["objective_last"] = trace.objective.back();
    }
    for (const auto& split : cfg.attack_splits) {
      if (!std::filesystem::exists(cfg.dataset_root / split)) continue;
      auto stats =
          write_attacked_split(cfg.dataset_root, split, cfg.attacked_root, *victim, patch,
                               cfg.attack);
      manifest["splits"][split] = {{"count", stats.count},
                                   {"clean_accuracy", stats.clean_acc},
                                   {"attacked_accuracy", stats.attacked_acc}};
      say(log, "attack[" + split + "]: clean " + std::to_string(stats.clean_acc) + " -> attacked " +
                   std::to_string(stats.attacked_acc));
    }
    // keep the patch itself for inspection
    Image patch_img(patch.ph, patch.pw);
    std::copy(patch.px.begin(), patch.px.end(), patch_img.px.begin());
    save_png(cfg.attacked_root / "patch.png", patch_img);
  } else if (cfg.attack_type == "per_image" || cfg.attack_type == "sticker" ||
             cfg.attack_type == "bpda") {
    std::unique_ptr<DefensePipeline> defense;
    DefenseFn defense_fn;
    if (cfg.attack_type == "bpda") {
      defense = std::make_unique<DefensePipeline>(
          DefensePipeline::load(cfg.bpda_defense_checkpoint));
      defense_fn = defense->as_fn();
    }
    const int side =
        patch_side_for_occupancy(cfg.attack.occupancy, cfg.synth.image_size, cfg.synth.image_size);
    PatchSpec sticker = make_sticker(side, cfg.attack.seed);
    for (const auto& split : cfg.attack_splits) {
      if (!std::filesystem::exists(cfg.dataset_root / split)) continue;
      auto refs = list_split(cfg.dataset_root, split);
      const size_t limit = cfg.attack_type == "bpda"
                               ? std::min<size_t>(refs.size(), static_cast<size_t>(cfg.bpda_subset))
                               : refs.size();
      AttackSplitStats stats;
      for (size_t i = 0; i < limit; ++i) {
        Image clean = load_png(refs[i].image_path);
        clean.label = refs[i].label;
        AttackConfig pc = cfg.attack;
        pc.seed = mix_seed(cfg.attack.seed, std::hash<std::string>{}(split), i);
        Image attacked;
        Mask mask;
        if (cfg.attack_type == "sticker") {
          PatchSpec best = sticker_location_search(*victim, clean, sticker, cfg.sticker_budget,
                                                   pc.seed);
          auto applied = apply_patch(clean, best);
          attacked = std::move(applied.first);
          mask = std::move(applied.second);
        } else if (cfg.attack_type == "per_image") {
          pc.per_image = true;
          PatchSpec spec = optimize_patch(*victim, {clean}, pc);
          auto applied = apply_patch(clean, spec);
          attacked = std::move(applied.first);
          mask = std::move(applied.second);
        } else {
          attacked = bpda_attack(*victim, defense_fn, clean, pc, &mask);
        }
        const auto dir = cfg.attacked_root / split / std::to_string(refs[i].label);
        save_png(dir / (refs[i].name + ".png"), attacked);
        save_mask_png(dir / (refs[i].name + ".mask.png"), mask);
        if (victim->predict(clean) == clean.label) stats.clean_acc += 1;
        if (victim->predict(attacked) == clean.label) stats.attacked_acc += 1;
        ++stats.count;
      }
      if (stats.count > 0) {
        stats.clean_acc /= stats.count;
        stats.attacked_acc /= stats.count;
      }
      manifest["splits"][split] = {{"count", stats.count},
                                   {"clean_accuracy", stats.clean_acc},
                                   {"attacked_accuracy", stats.attacked_acc}};
      say(log, "attack[" + split + "]: clean " + std::to_string(stats.clean_acc) + " -> attacked " +
                   std::to_string(stats.attacked_acc));
    }
  }
  std::filesystem::create_directories(cfg.attacked_root);
  std::ofstream(cfg.attacked_root / "attack.json") << manifest.dump(2) << "\n";
  cfg.write_resolved(cfg.attacked_root);
  return 0;
}

int cmd_train_defense(const PipelineConfig& cfg, bool dry_run, bool resume, const LogFn& log) {
  require_artifact(cfg.dataset_root / "train", "clean dataset", "gen-data");
  require_artifact(cfg.attacked_root / "train", "attacked dataset", "attack");
  require_artifact(cfg.victim_path, "victim checkpoint", "train-victim");
  if (dry_run) {
    say(log, "train-defense: would train stages " + std::to_string(cfg.defense.stage_epochs[0]) +
                 "/" + std::to_string(cfg.defense.stage_epochs[1]) + "/" +
                 std::to_string(cfg.defense.stage_epochs[2]) + "/" +
                 std::to_string(cfg.defense.stage_epochs[3]) + " into " +
                 cfg.defense_dir.string());
    return 0;
  }
  auto victim = ConvNetVictim::load_file(cfg.victim_path);
  DefenseDataset data = load_defense_dataset(cfg.dataset_root, cfg.attacked_root);
  DefenseConfig dcfg = cfg.defense;
  if (dcfg.weights.beta.size() != static_cast<size_t>(victim->num_taps()))
    dcfg.weights.beta = LossWeights::geometric_beta(victim->num_taps());
  TrainerIO io;
  io.records_path = cfg.defense_dir / "records.ndjson";
  io.checkpoint_dir = cfg.defense_dir / "checkpoints";
  io.config_hash = cfg.config_hash;
  io.log = log;
  if (!resume && std::filesystem::exists(io.records_path))
    std::filesystem::remove(io.records_path);
  auto result = train_defense(data, dcfg, *victim, *victim, io, resume);
  json j;
  j["best_epoch"] = result.best_epoch;
  j["best_val_defended_acc"] = result.best_val_acc;
  j["best_checkpoint"] = (io.checkpoint_dir / "best.ckpt").string();
  json curve = json::array();
  for (const auto& r : result.curve)
    curve.push_back({{"stage", r.stage},
                     {"epoch", r.epoch_global},
                     {"train_loss", r.train_loss},
                     {"val_defended_acc", r.val_defended_acc}});
  j["curve"] = curve;
  std::ofstream(cfg.defense_dir / "training.json") << j.dump(2) << "\n";
  cfg.write_resolved(cfg.defense_dir);
  say(log, "train-defense: best epoch " + std::to_string(result.best_epoch) + " val acc " +
               std::to_string(result.best_val_acc));
  return 0;
}

int cmd_defend(const PipelineConfig& cfg, bool dry_run, const LogFn& log) {
  const auto ckpt =
      cfg.defend_checkpoint.empty() ? cfg.defense_dir / "checkpoints" / "best.ckpt"
                                    : cfg.defend_checkpoint;
  const auto input_root = cfg.defend_input_root.empty() ? cfg.attacked_root : cfg.defend_input_root;
  require_artifact(ckpt, "defense checkpoint", "train-defense");
  require_artifact(input_root / cfg.defend_split, "input split", "attack");
  if (dry_run) {
    say(log, "defend: would run variant " + cfg.defend_variant + " over " +
                 (input_root / cfg.defend_split).string());
    return 0;
  }
  DefensePipeline pipe = DefensePipeline::load(ckpt);
  pipe.set_variant(variant_from_string(cfg.defend_variant));
  auto refs = list_split(input_root, cfg.defend_split);
  int ring_warnings = 0;
  constexpr size_t kChunk = 16;
  for (size_t off = 0; off < refs.size(); off += kChunk) {
    const size_t end = std::min(refs.size(), off + kChunk);
    std::vector<Image> images;
    for (size_t i = off; i < end; ++i) {
      images.push_back(load_png(refs[i].image_path));
      images.back().label = refs[i].label;
    }
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    auto results = pipe.defend_batch(ptrs);
    for (size_t i = off; i < end; ++i) {
      const auto dir = cfg.defended_root / cfg.defend_split / std::to_string(refs[i].label);
      save_png(dir / (refs[i].name + ".png"), results[i - off].recovered);
      save_mask_png(dir / (refs[i].name + ".mask.png"), results[i - off].predicted_mask);
      if (results[i - off].ring_warning) ++ring_warnings;
    }
  }
  json j;
  j["variant"] = cfg.defend_variant;
  j["checkpoint"] = ckpt.string();
  j["split"] = cfg.defend_split;
  j["count"] = refs.size();
  j["ring_fallback_batches"] = ring_warnings;
  std::filesystem::create_directories(cfg.defended_root);
  std::ofstream(cfg.defended_root / "defend.json") << j.dump(2) << "\n";
  cfg.write_resolved(cfg.defended_root);
  say(log, "defend: processed " + std::to_string(refs.size()) + " images (" + cfg.defend_variant +
               ")");
  return 0;
}

int cmd_evaluate(const PipelineConfig& cfg, bool dry_run, const LogFn& log) {
  require_artifact(cfg.victim_path, "victim checkpoint", "train-victim");
  if (cfg.conditions.empty())
    throw ConfigError("evaluate: eval.conditions is empty; nothing to evaluate");
  if (dry_run) {
    say(log, "evaluate: would evaluate " + std::to_string(cfg.conditions.size()) + " conditions");
    return 0;
  }
  auto victim = ConvNetVictim::load_file(cfg.victim_path);
  json rows = json::array();
  for (const auto& cond : cfg.conditions) {
    json row;
    row["condition"] = cond.name;
    if (!std::filesystem::exists(cond.images_root / cond.split)) {
      row["present"] = false;
      row["note"] = "missing dataset: " + (cond.images_root / cond.split).string();
      rows.push_back(row);
      continue;
    }
    SplitData d = load_split(cond.images_root, cond.split);
    row["present"] = true;
    row["count"] = d.images.size();
    row["top1_accuracy"] = top1_accuracy(*victim, d.images, d.labels);
    if (!cond.reference_root.empty()) {
      auto refs = list_split(cond.images_root, cond.split);
      double ssim_sum = 0, psnr_sum = 0;
      int n = 0;
      for (size_t i = 0; i < refs.size(); ++i) {
        const auto ref_path = cond.reference_root / cond.split /
                              std::to_string(refs[i].label) / (refs[i].name + ".png");
        if (!std::filesystem::exists(ref_path)) continue;
        Image ref = load_png(ref_path);
        ssim_sum += ssim(d.images[i], ref);
        psnr_sum += psnr(d.images[i], ref);
        ++n;
      }
      if (n > 0) {
        row["mean_ssim"] = ssim_sum / n;
        row["mean_psnr"] = psnr_sum / n;
      }
    }
    rows.push_back(row);
    say(log, "evaluate[" + cond.name + "]: top1 " +
                 std::to_string(row["top1_accuracy"].get<double>()));
  }
  json j;
  j["rows"] = rows;
  std::filesystem::create_directories(cfg.report_dir);
  std::ofstream(cfg.report_dir / "metrics.json") << j.dump(2) << "\n";
  cfg.write_resolved(cfg.report_dir);
  return 0;
}

int cmd_report(const PipelineConfig& cfg, bool dry_run, const LogFn& log) {
  require_artifact(cfg.victim_path, "victim checkpoint", "train-victim");
  if (dry_run) {
    say(log, "report: would build report over " + std::to_string(cfg.conditions.size()) +
                 " conditions into " + cfg.report_dir.string());
    return 0;
  }
  auto victim = ConvNetVictim::load_file(cfg.victim_path);
  const auto records = cfg.defense_dir / "records.ndjson";
  DefenseReport rep = build_report(*victim, cfg.conditions, cfg.report_dir, cfg.eval_seed,
                                   cfg.config_hash,
                                   std::filesystem::exists(records) ? records : "");
  cfg.write_resolved(cfg.report_dir);
  say(log, "report: " + std::to_string(rep.rows.size()) + " rows written to " +
               cfg.report_dir.string());
  return 0;
}

int run_command(const std::string& name, const PipelineConfig& cfg, bool dry_run, bool resume,
                const LogFn& log) {
  if (name == "gen-data") return cmd_gen_data(cfg, dry_run, log);
  if (name == "train-victim") return cmd_train_victim(cfg, dry_run, log);
  if (name == "attack") return cmd_attack(cfg, dry_run, log);
  if (name == "train-defense") return cmd_train_defense(cfg, dry_run, resume, log);
  if (name == "defend") return cmd_defend(cfg, dry_run, log);
  if (name == "evaluate") return cmd_evaluate(cfg, dry_run, log);
  if (name == "report") return cmd_report(cfg, dry_run, log);
  throw ConfigError("unknown command: " + name);
}

}  // namespace patchdef
