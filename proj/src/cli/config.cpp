#include "patchdef/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace patchdef {

using json = nlohmann::ordered_json;

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw ConfigError("config: unknown key '" + where + key + "'");
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void get_path(const json& j, const char* key, std::filesystem::path& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

json attack_to_json(const PipelineConfig& c) {
  return json{{"type", c.attack_type},
              {"occupancy", c.attack.occupancy},
              {"iterations", c.attack.iterations},
              {"step_size", c.attack.step_size},
              {"targeted", c.attack.targeted},
              {"target_class", c.attack.target_class},
              {"seed", c.attack.seed},
              {"batch_size", c.attack.batch_size},
              {"rot_min_deg", c.attack.rot_min_deg},
              {"rot_max_deg", c.attack.rot_max_deg},
              {"scale_min", c.attack.scale_min},
              {"scale_max", c.attack.scale_max},
              {"random_transforms", c.attack.random_transforms},
              {"out_root", c.attacked_root.string()},
              {"splits", c.attack_splits},
              {"sticker_budget", c.sticker_budget},
              {"bpda_subset", c.bpda_subset},
              {"bpda_defense_checkpoint", c.bpda_defense_checkpoint.string()}};
}

}  // namespace

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.defense.weights.beta = LossWeights::geometric_beta(5);
  return c;
}

std::string PipelineConfig::to_json_text() const {
  json j;
  j["dataset"] = {{"kind", dataset_kind},
                  {"root", dataset_root.string()},
                  {"image_size", synth.image_size},
                  {"num_classes", synth.num_classes},
                  {"train_per_class", synth.train_per_class},
                  {"val_per_class", synth.val_per_class},
                  {"test_per_class", synth.test_per_class},
                  {"seed", synth.seed},
                  {"ingest_src", ingest_src.string()},
                  {"ingest_min_side", ingest_min_side}};
  j["victim"] = {{"epochs", victim_epochs},
                 {"batch_size", victim_batch},
                 {"lr", victim_lr},
                 {"seed", victim_seed},
                 {"path", victim_path.string()}};
  j["attack"] = attack_to_json(*this);
  j["defense"] = {{"stage_epochs", defense.stage_epochs},
                  {"lr", defense.lr},
                  {"batch_size", defense.batch_size},
                  {"seed", defense.seed},
                  {"dilate_kernel", defense.dilate.kernel},
                  {"dilate_rate", defense.dilate.rate},
                  {"tau", defense.tau},
                  {"fuse_close_kernel", defense.fuse_close_kernel},
                  {"edge_thickness_base", defense.edge_thickness_base},
                  {"mask_straight_through", defense.mask_straight_through},
                  {"l1_hole_only", defense.l1_hole_only},
                  {"feed_masked_image", defense.feed_masked_image},
                  {"pcn_epsilon", defense.pcn_epsilon},
                  {"val_subset", defense.val_subset},
                  {"cache_frozen_features", defense.cache_frozen_features},
                  {"dir", defense_dir.string()},
                  {"weights",
                   {{"alpha", defense.weights.alpha},
                    {"alpha_auto", defense.weights.alpha_auto},
                    {"alpha_clip_lo", defense.weights.alpha_clip_lo},
                    {"alpha_clip_hi", defense.weights.alpha_clip_hi},
                    {"lambda_edge", defense.weights.lambda_edge},
                    {"lambda_fm", defense.weights.lambda_fm},
                    {"lambda_gan", defense.weights.lambda_gan},
                    {"lambda_prl", defense.weights.lambda_prl},
                    {"beta", defense.weights.beta}}}};
  j["defend"] = {{"variant", defend_variant},
                 {"split", defend_split},
                 {"out_root", defended_root.string()},
                 {"checkpoint", defend_checkpoint.string()},
                 {"input_root", defend_input_root.string()}};
  json conds = json::array();
  for (const auto& c : conditions)
    conds.push_back({{"name", c.name},
                     {"images_root", c.images_root.string()},
                     {"split", c.split},
                     {"reference_root", c.reference_root.string()},
                     {"gt_mask_root", c.gt_mask_root.string()}});
  j["eval"] = {{"report_dir", report_dir.string()}, {"seed", eval_seed}, {"conditions", conds}};
  return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text,
                                              const std::vector<std::string>& overrides) {
  json j = json::parse(text);
  // apply key.path=value overrides before validation
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "' is not of the form key.path=value");
    std::string path = ov.substr(0, eq), value = ov.substr(eq + 1);
    json* cur = &j;
    size_t pos = 0;
    while (true) {
      const size_t dot = path.find('.', pos);
      const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
      if (dot == std::string::npos) {
        json parsed = json::parse(value, nullptr, false);
        (*cur)[key] = parsed.is_discarded() ? json(value) : parsed;
        break;
      }
      cur = &((*cur)[key]);
      pos = dot + 1;
    }
  }

  PipelineConfig c = defaults();
  reject_unknown(j, {"dataset", "victim", "attack", "defense", "defend", "eval"}, "");
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    reject_unknown(d,
                   {"kind", "root", "image_size", "num_classes", "train_per_class",
                    "val_per_class", "test_per_class", "seed", "ingest_src", "ingest_min_side"},
                   "dataset.");
    get_to(d, "kind", c.dataset_kind);
    get_path(d, "root", c.dataset_root);
    get_to(d, "image_size", c.synth.image_size);
    get_to(d, "num_classes", c.synth.num_classes);
    get_to(d, "train_per_class", c.synth.train_per_class);
    get_to(d, "val_per_class", c.synth.val_per_class);
    get_to(d, "test_per_class", c.synth.test_per_class);
    get_to(d, "seed", c.synth.seed);
    get_path(d, "ingest_src", c.ingest_src);
    get_to(d, "ingest_min_side", c.ingest_min_side);
    if (c.dataset_kind != "synthetic" && c.dataset_kind != "ingested")
      throw ConfigError("config: dataset.kind must be 'synthetic' or 'ingested'");
  }
  if (j.contains("victim")) {
    const json& d = j["victim"];
    reject_unknown(d, {"epochs", "batch_size", "lr", "seed", "path"}, "victim.");
    get_to(d, "epochs", c.victim_epochs);
    get_to(d, "batch_size", c.victim_batch);
    get_to(d, "lr", c.victim_lr);
    get_to(d, "seed", c.victim_seed);
    get_path(d, "path", c.victim_path);
  }
  if (j.contains("attack")) {
    const json& d = j["attack"];
    reject_unknown(d,
                   {"type", "occupancy", "iterations", "step_size", "targeted", "target_class",
                    "seed", "batch_size", "rot_min_deg", "rot_max_deg", "scale_min", "scale_max",
                    "random_transforms", "out_root", "splits", "sticker_budget", "bpda_subset",
                    "bpda_defense_checkpoint"},
                   "attack.");
    get_to(d, "type", c.attack_type);
    get_to(d, "occupancy", c.attack.occupancy);
    get_to(d, "iterations", c.attack.iterations);
    get_to(d, "step_size", c.attack.step_size);
    get_to(d, "targeted", c.attack.targeted);
    get_to(d, "target_class", c.attack.target_class);
    get_to(d, "seed", c.attack.seed);
    get_to(d, "batch_size", c.attack.batch_size);
    get_to(d, "rot_min_deg", c.attack.rot_min_deg);
    get_to(d, "rot_max_deg", c.attack.rot_max_deg);
    get_to(d, "scale_min", c.attack.scale_min);
    get_to(d, "scale_max", c.attack.scale_max);
    get_to(d, "random_transforms", c.attack.random_transforms);
    get_path(d, "out_root", c.attacked_root);
    get_to(d, "splits", c.attack_splits);
    get_to(d, "sticker_budget", c.sticker_budget);
    get_to(d, "bpda_subset", c.bpda_subset);
    get_path(d, "bpda_defense_checkpoint", c.bpda_defense_checkpoint);
    const std::set<std::string> kinds{"universal", "per_image", "sticker", "bpda"};
    if (!kinds.count(c.attack_type))
      throw ConfigError("config: attack.type must be universal|per_image|sticker|bpda");
    if (c.attack.iterations < 1) throw ConfigError("config: attack.iterations must be >= 1");
  }
  if (j.contains("defense")) {
    const json& d = j["defense"];
    reject_unknown(d,
                   {"stage_epochs", "lr", "batch_size", "seed", "dilate_kernel", "dilate_rate",
                    "tau", "fuse_close_kernel", "edge_thickness_base", "mask_straight_through",
                    "l1_hole_only", "feed_masked_image", "pcn_epsilon", "val_subset",
                    "cache_frozen_features", "dir", "weights"},
                   "defense.");
    get_to(d, "stage_epochs", c.defense.stage_epochs);
    get_to(d, "lr", c.defense.lr);
    get_to(d, "batch_size", c.defense.batch_size);
    get_to(d, "seed", c.defense.seed);
    get_to(d, "dilate_kernel", c.defense.dilate.kernel);
    get_to(d, "dilate_rate", c.defense.dilate.rate);
    get_to(d, "tau", c.defense.tau);
    get_to(d, "fuse_close_kernel", c.defense.fuse_close_kernel);
    get_to(d, "edge_thickness_base", c.defense.edge_thickness_base);
    get_to(d, "mask_straight_through", c.defense.mask_straight_through);
    get_to(d, "l1_hole_only", c.defense.l1_hole_only);
    get_to(d, "feed_masked_image", c.defense.feed_masked_image);
    get_to(d, "pcn_epsilon", c.defense.pcn_epsilon);
    get_to(d, "val_subset", c.defense.val_subset);
    get_to(d, "cache_frozen_features", c.defense.cache_frozen_features);
    get_path(d, "dir", c.defense_dir);
    if (d.contains("weights")) {
      const json& w = d["weights"];
      reject_unknown(w,
                     {"alpha", "alpha_auto", "alpha_clip_lo", "alpha_clip_hi", "lambda_edge",
                      "lambda_fm", "lambda_gan", "lambda_prl", "beta"},
                     "defense.weights.");
      get_to(w, "alpha", c.defense.weights.alpha);
      get_to(w, "alpha_auto", c.defense.weights.alpha_auto);
      get_to(w, "alpha_clip_lo", c.defense.weights.alpha_clip_lo);
      get_to(w, "alpha_clip_hi", c.defense.weights.alpha_clip_hi);
      get_to(w, "lambda_edge", c.defense.weights.lambda_edge);
      get_to(w, "lambda_fm", c.defense.weights.lambda_fm);
      get_to(w, "lambda_gan", c.defense.weights.lambda_gan);
      get_to(w, "lambda_prl", c.defense.weights.lambda_prl);
      get_to(w, "beta", c.defense.weights.beta);
    }
    if (c.defense.stage_epochs.size() != 4)
      throw ConfigError("config: defense.stage_epochs must have 4 entries");
    c.defense.weights.validate();
  }
  if (j.contains("defend")) {
    const json& d = j["defend"];
    reject_unknown(d, {"variant", "split", "out_root", "checkpoint", "input_root"}, "defend.");
    get_to(d, "variant", c.defend_variant);
    get_to(d, "split", c.defend_split);
    get_path(d, "out_root", c.defended_root);
    get_path(d, "checkpoint", c.defend_checkpoint);
    get_path(d, "input_root", c.defend_input_root);
    const std::set<std::string> variants{"full", "no_inpaint", "no_dilation", "no_region"};
    if (!variants.count(c.defend_variant))
      throw ConfigError("config: defend.variant must be full|no_inpaint|no_dilation|no_region");
  }
  if (j.contains("eval")) {
    const json& d = j["eval"];
    reject_unknown(d, {"report_dir", "seed", "conditions", "records"}, "eval.");
    get_path(d, "report_dir", c.report_dir);
    get_to(d, "seed", c.eval_seed);
    if (d.contains("conditions")) {
      c.conditions.clear();
      for (const auto& jc : d["conditions"]) {
        reject_unknown(jc, {"name", "images_root", "split", "reference_root", "gt_mask_root"},
                       "eval.conditions[].");
        ReportCondition rc;
        rc.name = jc.at("name").get<std::string>();
        rc.images_root = jc.at("images_root").get<std::string>();
        if (jc.contains("split")) rc.split = jc.at("split").get<std::string>();
        if (jc.contains("reference_root"))
          rc.reference_root = jc.at("reference_root").get<std::string>();
        if (jc.contains("gt_mask_root")) rc.gt_mask_root = jc.at("gt_mask_root").get<std::string>();
        c.conditions.push_back(std::move(rc));
      }
    }
  }
  if (c.synth.image_size % 32 != 0)
    throw ConfigError("config: dataset.image_size must be a multiple of 32");
  c.defense.image_size = c.synth.image_size;
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(c.to_json_text())));
  c.config_hash = buf;
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path,
                                         const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_json_text(text, overrides);
}

void PipelineConfig::write_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "config.resolved.json");
  os << to_json_text();
  std::ofstream hs(dir / "config.hash");
  hs << config_hash << "\n";
}

}  // namespace patchdef
