#include "patchdef/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "patchdef/dataset.hpp"
#include "patchdef/pipeline.hpp"

namespace patchdef {

using json = nlohmann::ordered_json;
using nn::Tensor;
using nn::Var;

DefenseModels DefenseModels::init(const DefenseConfig& cfg, uint64_t seed) {
  DefenseModels m;
  Rng rng(seed);
  m.enc = Encoder(rng);
  m.aux_enc = Encoder(rng);
  m.region_dec = MaskDecoder(rng);
  m.edge_dec = MaskDecoder(rng);
  m.pri_dec = InpaintDecoder(rng, cfg.feed_masked_image, cfg.pcn_epsilon);
  m.disc = Discriminator(cfg.image_size, rng);
  return m;
}

std::map<std::string, nn::ParamMap> DefenseModels::groups() {
  std::map<std::string, nn::ParamMap> g;
  enc.params(g["encoder"], "enc");
  aux_enc.params(g["aux_encoder"], "aux");
  region_dec.params(g["region_decoder"], "region");
  edge_dec.params(g["edge_decoder"], "edge");
  pri_dec.params(g["inpaint_decoder"], "pri");
  disc.params(g["discriminator"], "disc");
  return g;
}

std::map<std::string, uint64_t> DefenseModels::group_hashes() {
  std::map<std::string, uint64_t> h;
  for (auto& [name, pm] : groups()) h[name] = pm.hash();
  return h;
}

nn::Checkpoint DefenseModels::to_checkpoint(const DefenseConfig& cfg, const std::string& rng_state,
                                            int epoch_global) const {
  nn::Checkpoint ck;
  ck.stage = stage_completed;
  ck.seed = cfg.seed;
  ck.rng_state = rng_state;
  ck.groups = const_cast<DefenseModels*>(this)->groups();
  ck.scalars["epoch_global"] = epoch_global;
  ck.scalars["image_size"] = cfg.image_size;
  ck.scalars["dilate_kernel"] = cfg.dilate.kernel;
  ck.scalars["dilate_rate"] = cfg.dilate.rate;
  ck.scalars["tau"] = cfg.tau;
  ck.scalars["fuse_close_kernel"] = cfg.fuse_close_kernel;
  ck.scalars["feed_masked_image"] = cfg.feed_masked_image ? 1.0 : 0.0;
  ck.scalars["pcn_epsilon"] = cfg.pcn_epsilon;
  return ck;
}

DefenseModels DefenseModels::from_checkpoint(const nn::Checkpoint& ck, const DefenseConfig& cfg) {
  DefenseModels m = DefenseModels::init(cfg, ck.seed);
  m.stage_completed = ck.stage;
  auto dst = m.groups();
  for (auto& [gname, src] : ck.groups) {
    auto it = dst.find(gname);
    if (it == dst.end()) throw TrainError("checkpoint: unknown parameter group " + gname);
    if (src.items.size() != it->second.items.size())
      throw TrainError("checkpoint: group " + gname + " parameter count mismatch");
    for (size_t i = 0; i < src.items.size(); ++i) {
      if (src.items[i].first != it->second.items[i].first)
        throw TrainError("checkpoint: parameter name mismatch in group " + gname);
      it->second.items[i].second.value() = src.items[i].second.value();
    }
  }
  for (auto& [gname, pm] : dst) pm.set_requires_grad(false);
  return m;
}

StagePlan StagePlan::standard(int stage, int epochs) {
  StagePlan p;
  p.stage = stage;
  p.epochs = epochs;
  switch (stage) {
    case 1:
      p.trainable = {"aux_encoder", "region_decoder", "edge_decoder"};
      p.frozen = {"encoder", "inpaint_decoder", "discriminator"};
      p.loss = Loss::Prl;
      break;
    case 2:
      p.trainable = {"encoder", "inpaint_decoder", "discriminator"};
      p.frozen = {"aux_encoder", "region_decoder", "edge_decoder"};
      p.loss = Loss::Pri;
      break;
    case 3:
      p.trainable = {"region_decoder", "edge_decoder"};
      p.frozen = {"encoder", "aux_encoder", "inpaint_decoder", "discriminator"};
      p.loss = Loss::Prl;
      break;
    case 4:
      p.trainable = {"inpaint_decoder", "discriminator"};
      p.frozen = {"encoder", "aux_encoder", "region_decoder", "edge_decoder"};
      p.loss = Loss::Pri;
      break;
    default:
      throw TrainError("StagePlan: stage must be 1..4");
  }
  return p;
}

DefenseDataset load_defense_dataset(const std::filesystem::path& clean_root,
                                    const std::filesystem::path& attacked_root) {
  DefenseDataset out;
  for (const std::string split : {"train", "val"}) {
    auto refs = list_split(attacked_root, split);
    std::vector<DefenseSample>& dst = split == "train" ? out.train : out.val;
    for (const auto& r : refs) {
      DefenseSample s;
      if (!r.mask_path)
        throw TrainError("defense dataset: sample " + r.name + " in " + split +
                         " has no ground-truth mask");
      auto loaded = load_sample(r);
      s.adv = std::move(loaded.image);
      s.gt_mask = std::move(*loaded.mask);
      s.label = r.label;
      const auto clean_path =
          clean_root / split / std::to_string(r.label) / (r.name + ".png");
      if (!std::filesystem::exists(clean_path))
        throw TrainError("defense dataset: missing clean counterpart " + clean_path.string());
      s.clean = load_png(clean_path);
      s.clean.label = r.label;
      dst.push_back(std::move(s));
    }
  }
  if (out.train.empty()) throw TrainError("defense dataset: empty training split");
  return out;
}

namespace {

Tensor images_tensor(const std::vector<const Image*>& xs) {
  return ConvNetVictim::batch_tensor(xs);
}

Tensor masks_tensor(const std::vector<const Mask*>& ms) {
  const int h = ms[0]->h, w = ms[0]->w;
  Tensor t({static_cast<int>(ms.size()), 1, h, w});
  for (size_t n = 0; n < ms.size(); ++n)
    std::copy(ms[n]->v.begin(), ms[n]->v.end(), t.data() + n * static_cast<size_t>(h) * w);
  return t;
}

void append_record(const std::filesystem::path& path, const json& j) {
  if (path.empty()) return;
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::app);
  os << j.dump() << "\n";
}

struct NanDump {
  std::filesystem::path dir;
  int stage, epoch, step;
  std::vector<size_t> batch;
  std::map<std::string, double> terms;
};

[[noreturn]] void abort_on_nan(const NanDump& d) {
  json j;
  j["stage"] = d.stage;
  j["epoch"] = d.epoch;
  j["step"] = d.step;
  j["batch_indices"] = d.batch;
  j["terms"] = d.terms;
  const auto path = d.dir / "nan_dump.json";
  std::filesystem::create_directories(d.dir);
  std::ofstream(path) << j.dump(2) << "\n";
  throw TrainError("NaN loss at stage " + std::to_string(d.stage) + " epoch " +
                   std::to_string(d.epoch) + " step " + std::to_string(d.step) +
                   "; diagnostics in " + path.string());
}

/// Defended top-1 accuracy on (a subset of) the validation split using the
/// stage's operational assembly of the models.
double validation_defended_accuracy(const DefenseDataset& data, DefenseModels& models,
                                    const DefenseConfig& cfg, const VictimClassifier& victim,
                                    int stage) {
  if (data.val.empty()) return 0.0;
  const size_t n_eval = std::min<size_t>(data.val.size(),
                                         static_cast<size_t>(std::max(1, cfg.val_subset)));
  DefensePipeline pipe(models, cfg, /*masks_from_aux=*/stage <= 2);  // aliases parameters
  int correct = 0;
  constexpr size_t kChunk = 16;
  for (size_t off = 0; off < n_eval; off += kChunk) {
    const size_t end = std::min(n_eval, off + kChunk);
    std::vector<const Image*> xs;
    for (size_t i = off; i < end; ++i) xs.push_back(&data.val[i].adv);
    auto results = pipe.defend_batch(xs);
    std::vector<const Image*> recs;
    for (const auto& r : results) recs.push_back(&r.recovered);
    auto probs = victim.forward_batch(recs);
    for (size_t i = off; i < end; ++i) {
      const auto& p = probs[i - off];
      const int arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      if (arg == data.val[i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n_eval);
}

/// Predicted binary masks for every training sample from the given encoder +
/// decoders (used to cache the stage-2 mask handoff and the stage-4 inputs).
std::vector<Mask> predict_masks(const std::vector<DefenseSample>& samples, const Encoder& enc,
                                const MaskDecoder& region_dec, const MaskDecoder& edge_dec,
                                const DefenseConfig& cfg) {
  std::vector<Mask> out(samples.size());
  FuseConfig fuse_cfg{cfg.tau, cfg.fuse_close_kernel};
  constexpr size_t kChunk = 16;
  for (size_t off = 0; off < samples.size(); off += kChunk) {
    const size_t end = std::min(samples.size(), off + kChunk);
    std::vector<const Image*> xs;
    for (size_t i = off; i < end; ++i) xs.push_back(&samples[i].adv);
    Var f = enc.forward(Var(images_tensor(xs)));
    Var region = region_dec.forward(f);
    Var edge = edge_dec.forward(f);
    for (size_t i = off; i < end; ++i) {
      Mask r = mask_from_tensor(region.value(), static_cast<int>(i - off));
      Mask e = mask_from_tensor(edge.value(), static_cast<int>(i - off));
      Mask fused = fuse_masks(r, e, fuse_cfg);
      // a usable mask must leave clean context at the working resolution;
      // degenerate predictions collapse to "nothing to inpaint"
      if (mask_leaves_no_context(fused)) {
        for (auto& v : fused.v) v = 0.0f;
      }
      out[i] = std::move(fused);
    }
  }
  return out;
}

/// Frozen-encoder features for every training sample.
std::vector<Tensor> cache_features(const std::vector<DefenseSample>& samples, const Encoder& enc) {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  constexpr size_t kChunk = 16;
  for (size_t off = 0; off < samples.size(); off += kChunk) {
    const size_t end = std::min(samples.size(), off + kChunk);
    std::vector<const Image*> xs;
    for (size_t i = off; i < end; ++i) xs.push_back(&samples[i].adv);
    Var f = enc.forward(Var(images_tensor(xs)));
    const auto& s = f.value().shape();
    const int64_t per = static_cast<int64_t>(s[1]) * s[2] * s[3];
    for (size_t i = off; i < end; ++i) {
      Tensor t({1, s[1], s[2], s[3]});
      std::copy(f.value().data() + (i - off) * per, f.value().data() + (i - off + 1) * per,
                t.data());
      out.push_back(std::move(t));
    }
  }
  return out;
}

Tensor stack_features(const std::vector<Tensor>& cache, const std::vector<size_t>& idx) {
  const auto& s = cache[idx[0]].shape();
  Tensor t({static_cast<int>(idx.size()), s[1], s[2], s[3]});
  const int64_t per = static_cast<int64_t>(s[1]) * s[2] * s[3];
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(cache[idx[i]].data(), cache[idx[i]].data() + per, t.data() + i * per);
  return t;
}

}  // namespace

void run_stage(const StagePlan& plan, const DefenseDataset& data, DefenseModels& models,
               const DefenseConfig& cfg, const FeatureExtractor& extractor,
               const VictimClassifier& victim, TrainerIO& io, Rng& rng, int* epoch_global,
               std::vector<EpochRecord>* curve,
               const std::map<std::string, nn::Adam::State>* resume_optim) {
  if (models.stage_completed != plan.stage - 1)
    throw TrainError("run_stage: stage " + std::to_string(plan.stage) +
                     " requires completed stage " + std::to_string(plan.stage - 1) +
                     ", have " + std::to_string(models.stage_completed));
  auto groups = models.groups();
  for (auto& [name, pm] : groups) pm.set_requires_grad(false);
  nn::ParamMap trainable_gen;
  nn::ParamMap trainable_disc;
  for (const auto& gname : plan.trainable) {
    auto it = groups.find(gname);
    if (it == groups.end()) throw TrainError("run_stage: unknown group " + gname);
    it->second.set_requires_grad(true);
    auto& dst = (gname == "discriminator") ? trainable_disc : trainable_gen;
    for (auto& [pname, var] : it->second.items) dst.add(gname + "." + pname, var);
  }
  const bool adversarial = trainable_disc.items.size() > 0;
  const float stage_lr = cfg.lr / static_cast<float>(1 << (plan.stage - 1));
  nn::Adam gen_opt(trainable_gen, stage_lr);
  nn::Adam disc_opt(trainable_disc, stage_lr);
  if (resume_optim) {
    if (auto it = resume_optim->find("generator"); it != resume_optim->end())
      gen_opt.restore(it->second);
    if (auto it = resume_optim->find("discriminator"); it != resume_optim->end())
      disc_opt.restore(it->second);
  }

  const int edge_t = cfg.edge_thickness();
  LossWeights w = cfg.weights;

  // stage-dependent cached inputs
  std::vector<Mask> cached_masks;     // stages 2 and 4: the PRI hole per sample
  std::vector<Tensor> feat_cache;     // stages 3 and 4: frozen encoder features
  const bool use_feat_cache = cfg.cache_frozen_features && (plan.stage == 3 || plan.stage == 4);
  if (plan.stage == 2)
    cached_masks = predict_masks(data.train, models.aux_enc, models.region_dec, models.edge_dec,
                                 cfg);
  if (plan.stage == 4)
    cached_masks = predict_masks(data.train, models.enc, models.region_dec, models.edge_dec, cfg);
  if (use_feat_cache) feat_cache = cache_features(data.train, models.enc);

  std::vector<size_t> order(data.train.size());

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    // shuffle from the identity so a resumed run sees the same permutation
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int64_t seen = 0;
    int step = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
      std::vector<size_t> idx(order.begin() + static_cast<long>(off),
                              order.begin() + static_cast<long>(end));
      std::vector<const Image*> adv_ptrs, clean_ptrs;
      std::vector<const Mask*> gt_ptrs;
      for (size_t i : idx) {
        adv_ptrs.push_back(&data.train[i].adv);
        clean_ptrs.push_back(&data.train[i].clean);
        gt_ptrs.push_back(&data.train[i].gt_mask);
      }
      Var x_adv(images_tensor(adv_ptrs));
      json terms;
      double total_val = 0.0;

      if (plan.loss == StagePlan::Loss::Prl) {
        // localization stages: region + edge supervision
        std::vector<EdgeMap> edges;
        std::vector<const Mask*> edge_ptrs;
        for (size_t i : idx) edges.push_back(mask_to_edge(data.train[i].gt_mask, edge_t));
        for (const auto& e : edges) edge_ptrs.push_back(&e);
        Var gt_region = nn::constant(masks_tensor(gt_ptrs));
        Var gt_edge = nn::constant(masks_tensor(edge_ptrs));
        if (w.alpha_auto)
          w.alpha = auto_alpha(gt_region.value(), w.alpha_clip_lo, w.alpha_clip_hi);
        Var f = plan.stage == 3 && use_feat_cache
                    ? Var(stack_features(feat_cache, idx))
                    : (plan.stage == 1 ? models.aux_enc : models.enc).forward(x_adv);
        Var region = models.region_dec.forward(f);
        Var edge = models.edge_dec.forward(f);
        Var loss = prl_loss(region, gt_region, edge, gt_edge, w);
        total_val = loss.value().item();
        terms["prl"] = total_val;
        terms["alpha"] = w.alpha;
        if (!std::isfinite(total_val))
          abort_on_nan({io.checkpoint_dir, plan.stage, *epoch_global + 1, step, idx,
                        {{"prl", total_val}}});
        gen_opt.zero_grad();
        nn::backward(loss);
        gen_opt.step();
      } else {
        // reconstruction stages: L1 + feature + adversarial terms
        const std::vector<Mask>* holes = &cached_masks;
        std::vector<const Mask*> hole_ptrs;
        for (size_t i : idx) hole_ptrs.push_back(&(*holes)[i]);
        MaskPyramid py = build_mask_pyramid(hole_ptrs, cfg.dilate);
        Var hole_full = nn::constant(masks_tensor(hole_ptrs));
        if (cfg.mask_straight_through) {
          // soft compositing from the live region prediction; the producers
          // are frozen in these stages so no parameter gradient results
          const Encoder& mask_enc = plan.stage == 2 ? models.aux_enc : models.enc;
          hole_full = nn::detach(models.region_dec.forward(mask_enc.forward(x_adv)));
        }
        Var f = use_feat_cache ? Var(stack_features(feat_cache, idx))
                               : models.enc.forward(x_adv);
        Var x_clean(images_tensor(clean_ptrs));
        bool ring_warn = false;
        Var x_raw = models.pri_dec.forward(f, x_adv, py, &ring_warn);
        Var x_comp = composite_graph(x_raw, x_adv, hole_full);

        GanTerms gan = gan_losses(models.disc, x_comp, x_clean);
        Var l1 = cfg.l1_hole_only
                     ? nn::div(nn::sum_all(nn::mul(nn::abs_op(nn::sub(x_comp, x_clean)),
                                                   hole_full)),
                               nn::clamp_min(nn::mul_scalar(nn::sum_all(hole_full), 3.0f), 1.0f))
                     : nn::mean_all(nn::abs_op(nn::sub(x_comp, x_clean)));
        Var fm = fm_loss(x_comp, x_clean, extractor, w.beta);
        Var total = nn::add(l1, nn::mul_scalar(fm, w.lambda_fm));
        total = nn::add(total, nn::mul_scalar(gan.g_term, w.lambda_gan));
        total_val = total.value().item();
        const double d_val = gan.d_term.value().item();
        terms["total"] = total_val;
        terms["l1"] = l1.value().item();
        terms["fm"] = fm.value().item();
        terms["gan_g"] = gan.g_term.value().item();
        terms["gan_d"] = d_val;
        if (ring_warn) terms["ring_fallback"] = true;
        if (!std::isfinite(total_val) || !std::isfinite(d_val))
          abort_on_nan({io.checkpoint_dir, plan.stage, *epoch_global + 1, step, idx,
                        {{"total", total_val}, {"gan_d", d_val}}});
        // discriminator update first (1:1 alternation with the generator)
        if (adversarial) {
          disc_opt.zero_grad();
          nn::backward(gan.d_term);
          disc_opt.step();
          disc_opt.zero_grad();
        }
        gen_opt.zero_grad();
        nn::backward(total);
        gen_opt.step();
      }

      loss_sum += total_val * static_cast<double>(idx.size());
      seen += static_cast<int64_t>(idx.size());
      terms["kind"] = "step";
      terms["stage"] = plan.stage;
      terms["epoch"] = *epoch_global + 1;
      terms["step"] = step;
      append_record(io.records_path, terms);
      ++step;
    }

    ++(*epoch_global);
    const double val_acc =
        validation_defended_accuracy(data, models, cfg, victim, plan.stage);
    EpochRecord rec{plan.stage, *epoch_global, loss_sum / static_cast<double>(seen), val_acc};
    if (curve) curve->push_back(rec);
    json jv;
    jv["kind"] = "val";
    jv["stage"] = plan.stage;
    jv["epoch"] = *epoch_global;
    jv["train_loss"] = rec.train_loss;
    jv["val_defended_acc"] = val_acc;
    append_record(io.records_path, jv);
    if (io.log)
      io.log("stage " + std::to_string(plan.stage) + " epoch " + std::to_string(*epoch_global) +
             " loss=" + std::to_string(rec.train_loss) + " val_acc=" + std::to_string(val_acc));

    if (!io.checkpoint_dir.empty()) {
      nn::Checkpoint ck = models.to_checkpoint(cfg, rng_state_to_string(rng), *epoch_global);
      ck.stage = (epoch == plan.epochs - 1) ? plan.stage : plan.stage - 1;
      ck.config_hash = io.config_hash;
      ck.scalars["val_defended_acc"] = val_acc;
      ck.scalars["stage_in_progress"] = plan.stage;
      ck.scalars["epoch_in_stage"] = epoch + 1;
      ck.optims["generator"] = gen_opt.snapshot();
      if (adversarial) ck.optims["discriminator"] = disc_opt.snapshot();
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", *epoch_global);
      ck.save(io.checkpoint_dir / name);
    }
  }
  models.stage_completed = plan.stage;
  for (auto& [name, pm] : groups) pm.set_requires_grad(false);
}

int argmax_epoch(const std::vector<EpochRecord>& curve) {
  if (curve.empty()) return 0;
  size_t best = 0;
  for (size_t i = 1; i < curve.size(); ++i)
    if (curve[i].val_defended_acc > curve[best].val_defended_acc) best = i;
  return curve[best].epoch_global;
}

TrainDefenseResult train_defense(const DefenseDataset& data, const DefenseConfig& cfg,
                                 const FeatureExtractor& extractor, const VictimClassifier& victim,
                                 TrainerIO& io, bool resume) {
  if (cfg.stage_epochs.size() != 4) throw TrainError("train_defense: need 4 stage budgets");
  DefenseModels models = DefenseModels::init(cfg, cfg.seed);
  Rng rng(mix_seed(cfg.seed, 0x7261696eULL));
  int epoch_global = 0;
  TrainDefenseResult result;

  int resume_stage = 1, resume_epoch_in_stage = 0;
  std::map<std::string, nn::Adam::State> resume_optim;
  if (resume && !io.checkpoint_dir.empty()) {
    // find the latest epoch checkpoint
    std::filesystem::path latest;
    int latest_epoch = 0;
    if (std::filesystem::exists(io.checkpoint_dir))
      for (const auto& e : std::filesystem::directory_iterator(io.checkpoint_dir)) {
        const std::string n = e.path().filename().string();
        if (n.rfind("epoch_", 0) == 0 && n.size() >= 14) {
          const int ep = std::stoi(n.substr(6, 3));
          if (ep > latest_epoch) {
            latest_epoch = ep;
            latest = e.path();
          }
        }
      }
    if (latest_epoch > 0) {
      nn::Checkpoint ck = nn::Checkpoint::load(latest);
      models = DefenseModels::from_checkpoint(ck, cfg);
      models.stage_completed = ck.stage;
      rng_state_from_string(rng, ck.rng_state);
      epoch_global = latest_epoch;
      resume_stage = static_cast<int>(ck.scalars.at("stage_in_progress"));
      resume_epoch_in_stage = static_cast<int>(ck.scalars.at("epoch_in_stage"));
      resume_optim = ck.optims;
      if (resume_epoch_in_stage >= cfg.stage_epochs[static_cast<size_t>(resume_stage - 1)]) {
        resume_stage += 1;
        resume_epoch_in_stage = 0;
      }
      if (io.log) io.log("resuming from epoch " + std::to_string(latest_epoch));
      // rebuild the earlier part of the curve from the records file
      if (std::filesystem::exists(io.records_path)) {
        std::ifstream is(io.records_path);
        std::string line;
        while (std::getline(is, line)) {
          if (line.empty()) continue;
          json j = json::parse(line, nullptr, false);
          if (j.is_discarded() || j.value("kind", "") != "val") continue;
          if (j.value("epoch", 0) <= epoch_global)
            result.curve.push_back(EpochRecord{j.value("stage", 0), j.value("epoch", 0),
                                               j.value("train_loss", 0.0),
                                               j.value("val_defended_acc", 0.0)});
        }
      }
    }
  }

  for (int stage = resume_stage; stage <= 4; ++stage) {
    int budget = cfg.stage_epochs[static_cast<size_t>(stage - 1)];
    const bool resumed_mid_stage = stage == resume_stage && resume_epoch_in_stage > 0;
    if (resumed_mid_stage) {
      budget -= resume_epoch_in_stage;
      models.stage_completed = stage - 1;  // mid-stage: restored params, stage not done
    }
    StagePlan plan = StagePlan::standard(stage, std::max(0, budget));
    run_stage(plan, data, models, cfg, extractor, victim, io, rng, &epoch_global, &result.curve,
              resumed_mid_stage ? &resume_optim : nullptr);
  }

  result.best_epoch = argmax_epoch(result.curve);
  for (const auto& r : result.curve)
    if (r.epoch_global == result.best_epoch) result.best_val_acc = r.val_defended_acc;
  if (!io.checkpoint_dir.empty() && result.best_epoch > 0) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", result.best_epoch);
    result.best_checkpoint = io.checkpoint_dir / name;
    result.final_checkpoint = io.checkpoint_dir / "final.ckpt";
    std::filesystem::copy_file(result.best_checkpoint, io.checkpoint_dir / "best.ckpt",
                               std::filesystem::copy_options::overwrite_existing);
    nn::Checkpoint final_ck =
        models.to_checkpoint(cfg, rng_state_to_string(rng), epoch_global);
    final_ck.config_hash = io.config_hash;
    final_ck.save(result.final_checkpoint);
  }
  return result;
}

}  // namespace patchdef
