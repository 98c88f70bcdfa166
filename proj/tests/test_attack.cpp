#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "patchdef/attack.hpp"

using namespace patchdef;
using namespace patchdef::testing;

namespace {

Image random_image(int h, int w, int label, Rng& rng) {
  Image img(h, w);
  img.label = label;
  for (auto& v : img.px) v = uniform(rng, 0.0f, 1.0f);
  return img;
}

/// Victim that refuses gradients, for the error-path test.
class NoGradVictim : public VictimClassifier {
 public:
  int num_classes() const override { return 2; }
  bool has_gradient() const override { return false; }
  std::vector<std::vector<float>> forward_batch(
      const std::vector<const Image*>& xs) const override {
    return std::vector<std::vector<float>>(xs.size(), {0.5f, 0.5f});
  }
  std::vector<std::vector<float>> logp_gradient_batch(
      const std::vector<const Image*>& xs, const std::vector<int>&) const override {
    throw std::logic_error("no gradients");
  }
};

double true_prob(const VictimClassifier& m, const Image& x) {
  return m.forward(x)[static_cast<size_t>(x.label)];
}

}  // namespace

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  cfg.occupancy = 0.5;
  CHECK_THROWS_AS(cfg.validate(10), ImageError);
  cfg.occupancy = 0.05;
  cfg.targeted = true;
  cfg.target_class = -1;
  CHECK_THROWS_AS(cfg.validate(10), ImageError);
  cfg.target_class = 3;
  CHECK_NOTHROW(cfg.validate(10));
}

TEST_CASE("random_patch hits the occupancy within half a point") {
  Rng rng(1);
  for (double occ : {0.02, 0.03, 0.05}) {
    PatchSpec p = random_patch(occ, 64, 64, rng);
    const double achieved = static_cast<double>(p.ph) * p.pw / (64.0 * 64.0);
    CHECK(std::fabs(achieved - occ) <= 0.005);
    for (float v : p.px) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("zero iterations returns the seeded initial patch unchanged") {
  Rng img_rng(2);
  std::vector<Image> images{random_image(32, 32, 0, img_rng)};
  LinearSoftmaxVictim victim(32, 32, 2, 7);
  AttackConfig cfg;
  cfg.iterations = 0;
  cfg.seed = 123;
  cfg.per_image = true;
  PatchSpec got = optimize_patch(victim, images, cfg);
  // reproduce the seeded draw independently
  Rng rng(123);
  PatchSpec want = random_patch(cfg.occupancy, 32, 32, rng);
  CHECK(got.px == want.px);
  CHECK(got.ph == want.ph);
}

TEST_CASE("line-searched ascent on a fixed sample is monotone (toy 2-class model)") {
  Rng rng(3);
  Image x = random_image(16, 16, 0, rng);
  LinearSoftmaxVictim victim(16, 16, 2, 11);
  Rng prng(33);
  PatchSpec patch;
  patch.ph = patch.pw = 4;
  patch.px.resize(48);
  for (auto& v : patch.px) v = uniform(prng, 0.0f, 1.0f);
  patch.row = 4;
  patch.col = 5;
  PatchFootprint fp = patch_footprint(patch, 16, 16);
  const int target = 1;
  auto objective = [&](const PatchSpec& p) {
    Image patched = apply_patch(x, p).first;
    return std::log(std::max(1e-12, static_cast<double>(victim.forward(patched)[target])));
  };
  double prev = objective(patch);
  for (int it = 0; it < 25; ++it) {
    Image patched = apply_patch(x, patch).first;
    auto g_img = victim.logp_gradient(patched, target);
    auto g = gradient_wrt_patch(g_img, fp, patch.ph, patch.pw);
    float step = 0.05f;
    PatchSpec cand = patch;
    double next = prev;
    for (int tries = 0; tries < 20; ++tries) {  // backtracking line search
      cand = patch;
      for (size_t i = 0; i < cand.px.size(); ++i)
        cand.px[i] = std::clamp(cand.px[i] + step * g[i], 0.0f, 1.0f);
      next = objective(cand);
      if (next >= prev - 1e-9) break;
      step *= 0.5f;
    }
    REQUIRE(next >= prev - 1e-9);
    patch = cand;
    prev = next;
  }
}

TEST_CASE("targeted optimization raises the held-minibatch objective") {
  Rng rng(4);
  std::vector<Image> images;
  for (int i = 0; i < 6; ++i) images.push_back(random_image(32, 32, i % 3, rng));
  LinearSoftmaxVictim victim(32, 32, 3, 13);
  AttackConfig cfg;
  cfg.iterations = 30;
  cfg.step_size = 0.02f;
  cfg.targeted = true;
  cfg.target_class = 2;
  cfg.seed = 5;
  cfg.batch_size = 6;
  cfg.random_transforms = false;
  PatchSpec final_patch = optimize_patch(victim, images, cfg);
  Rng init_rng(cfg.seed);
  PatchSpec init_patch = random_patch(cfg.occupancy, 32, 32, init_rng);

  // held minibatch: one fixed placement per image
  Rng place_rng(77);
  double before = 0, after = 0;
  for (const auto& img : images) {
    PatchSpec at = sample_placement(init_patch, 32, 32, cfg, place_rng);
    PatchSpec at_final = at;
    at_final.px = final_patch.px;
    before += std::log(std::max(
        1e-12, static_cast<double>(victim.forward(apply_patch(img, at).first)[2])));
    after += std::log(std::max(
        1e-12, static_cast<double>(victim.forward(apply_patch(img, at_final).first)[2])));
  }
  CHECK(after >= before);
}

TEST_CASE("attack outputs stay in range with exact binary masks") {
  Rng rng(5);
  std::vector<Image> images;
  for (int i = 0; i < 4; ++i) images.push_back(random_image(32, 32, i % 2, rng));
  LinearSoftmaxVictim victim(32, 32, 2, 17);
  AttackConfig cfg;
  cfg.iterations = 10;
  cfg.seed = 6;
  PatchSpec patch = optimize_patch(victim, images, cfg);
  Rng prng(99);
  PatchSpec placed = sample_placement(patch, 32, 32, cfg, prng);
  auto [attacked, mask] = apply_patch(images[0], placed);
  for (float v : attacked.px) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(mask.is_binary());
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j)
      if (mask.at(i, j) == 0.0f)
        for (int c = 0; c < 3; ++c) CHECK(attacked.at(c, i, j) == images[0].at(c, i, j));
}

TEST_CASE("gradient-free models are rejected") {
  NoGradVictim victim;
  Rng rng(7);
  std::vector<Image> images{random_image(16, 16, 0, rng)};
  AttackConfig cfg;
  CHECK_THROWS_WITH_AS(optimize_patch(victim, images, cfg), doctest::Contains("gradient"),
                       ImageError);
}

TEST_CASE("sticker search: degenerate budget, argmin contract, brute-force match") {
  Rng rng(8);
  LinearSoftmaxVictim victim(8, 8, 2, 19);
  Image img = random_image(8, 8, 0, rng);
  PatchSpec sticker;
  sticker.ph = sticker.pw = 2;
  sticker.px.assign(12, 0.9f);

  SUBCASE("budget 1 returns the first grid location") {
    PatchSpec got = sticker_location_search(victim, img, sticker, 1, 42);
    CHECK(got.row == 0);
    CHECK(got.col == 0);
  }
  SUBCASE("returned location beats every evaluated candidate") {
    std::vector<PatchSpec> evaluated;
    PatchSpec best = sticker_location_search(victim, img, sticker, 24, 42, &evaluated);
    CHECK(evaluated.size() == 24);
    const double best_prob = true_prob(victim, apply_patch(img, best).first);
    for (const auto& cand : evaluated)
      CHECK(best_prob <= true_prob(victim, apply_patch(img, cand).first) + 1e-9);
  }
  SUBCASE("exhaustive search matches brute-force enumeration") {
    // stride-1 grid covers all 7x7 placements when the budget allows it
    PatchSpec got = sticker_location_search(victim, img, sticker, 49, 42);
    double best = 1e9;
    int br = -1, bc = -1;
    for (int r = 0; r + 2 <= 8; ++r)
      for (int c = 0; c + 2 <= 8; ++c) {
        PatchSpec s = sticker;
        s.row = r;
        s.col = c;
        const double p = true_prob(victim, apply_patch(img, s).first);
        if (p < best) {
          best = p;
          br = r;
          bc = c;
        }
      }
    CHECK(got.row == br);
    CHECK(got.col == bc);
  }
}

TEST_CASE("bpda with identity defense reproduces per-image optimization exactly") {
  Rng rng(9);
  Image img = random_image(32, 32, 1, rng);
  LinearSoftmaxVictim victim(32, 32, 2, 23);
  AttackConfig cfg;
  cfg.iterations = 8;
  cfg.seed = 31;
  cfg.per_image = true;
  PatchSpec direct = optimize_patch(victim, {img}, cfg);
  DefenseFn identity = [](const Image& x) { return x; };
  Mask mask;
  Image via_bpda = bpda_attack(victim, identity, img, cfg, &mask);
  Image via_direct = apply_patch(img, direct).first;
  CHECK(via_bpda.px == via_direct.px);

  SUBCASE("pixels outside the patch mask never change") {
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j)
        if (mask.at(i, j) == 0.0f)
          for (int c = 0; c < 3; ++c) CHECK(via_bpda.at(c, i, j) == img.at(c, i, j));
  }
}
