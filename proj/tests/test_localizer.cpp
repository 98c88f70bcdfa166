#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "patchdef/localizer.hpp"
#include "patchdef/losses.hpp"
#include "patchdef/optim.hpp"

using namespace patchdef;
using namespace patchdef::testing;
using nn::Tensor;
using nn::Var;

TEST_CASE("encoder: shape contract, determinism, finiteness, size errors") {
  Rng rng(1);
  Encoder enc(rng);
  nn::ParamMap pm;
  enc.params(pm, "enc");
  pm.set_requires_grad(false);

  Tensor x0 = random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f);
  Var f1 = enc.forward(Var(x0));
  CHECK(f1.value().shape() == std::vector<int>{1, 256, 8, 8});

  SUBCASE("identical inputs give bitwise-identical outputs") {
    Var f2 = enc.forward(Var(x0));
    for (int64_t i = 0; i < f1.value().numel(); ++i)
      CHECK(f1.value().data()[i] == f2.value().data()[i]);
  }
  SUBCASE("all-zero input stays finite") {
    Var f = enc.forward(Var(Tensor({1, 3, 32, 32})));
    for (int64_t i = 0; i < f.value().numel(); ++i) CHECK(std::isfinite(f.value().data()[i]));
  }
  SUBCASE("indivisible input size is rejected") {
    CHECK_THROWS_AS(enc.forward(Var(Tensor({1, 3, 30, 30}))), ImageError);
  }
  SUBCASE("channel plan follows the eight-block schedule") {
    // conv1 output channels per block: 64,64,128,128,256,256,256,256
    const int want[8] = {64, 64, 128, 128, 256, 256, 256, 256};
    for (int b = 0; b < 8; ++b) {
      Var* w = pm.find("enc.block" + std::to_string(b + 1) + ".conv1.w");
      REQUIRE(w != nullptr);
      CHECK(w->value().shape()[0] == want[b]);
    }
  }
}

TEST_CASE("mask decoders: shape, range, parameter disjointness") {
  Rng rng(2);
  MaskDecoder region(rng), edge(rng);
  Tensor f0 = random_tensor({2, 256, 8, 8}, rng, -1.0f, 1.0f);
  Var r = region.forward(Var(f0));
  Var e = edge.forward(Var(f0));
  CHECK(r.value().shape() == std::vector<int>{2, 1, 32, 32});
  CHECK(e.value().shape() == std::vector<int>{2, 1, 32, 32});
  for (int64_t i = 0; i < r.value().numel(); ++i) {
    CHECK(r.value().data()[i] >= 0.0f);
    CHECK(r.value().data()[i] <= 1.0f);
  }

  SUBCASE("decoder layer channels follow the declared plan") {
    nn::ParamMap pm;
    region.params(pm, "d");
    CHECK(pm.find("d.res1.conv1.w")->value().shape()[0] == 128);
    CHECK(pm.find("d.res2.conv1.w")->value().shape()[0] == 64);
    CHECK(pm.find("d.res3.conv1.w")->value().shape()[0] == 32);
    CHECK(pm.find("d.conv16.w")->value().shape()[0] == 16);
    CHECK(pm.find("d.conv1.w")->value().shape()[0] == 1);
  }
  SUBCASE("updating one branch leaves the other untouched") {
    nn::ParamMap pr, pe;
    region.params(pr, "r");
    edge.params(pe, "e");
    const uint64_t edge_hash_before = pe.hash();
    pr.set_requires_grad(true);
    nn::Adam opt(pr, 1e-3f);
    opt.zero_grad();
    Var loss = nn::mean_all(region.forward(Var(f0)));
    nn::backward(loss);
    opt.step();
    CHECK(pe.hash() == edge_hash_before);
    pr.set_requires_grad(false);
  }
}

TEST_CASE("localizer end to end: gradient reaches encoder parameters") {
  Rng rng(3);
  Encoder enc(rng);
  MaskDecoder region(rng), edge(rng);
  nn::ParamMap enc_params;
  enc.params(enc_params, "enc");
  enc_params.set_requires_grad(true);

  Tensor x0 = random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  Tensor gt_r({1, 1, 16, 16});
  Tensor gt_e({1, 1, 16, 16});
  for (int i = 4; i < 9; ++i)
    for (int j = 4; j < 9; ++j) gt_r.at(0, 0, i, j) = 1.0f;
  for (int j = 4; j < 9; ++j) {
    gt_e.at(0, 0, 4, j) = gt_e.at(0, 0, 8, j) = 1.0f;
    gt_e.at(0, 0, j, 4) = gt_e.at(0, 0, j, 8) = 1.0f;
  }
  LossWeights w;
  w.alpha = 3.0f;

  auto loss_fn = [&] {
    Var f = enc.forward(Var(x0));
    return prl_loss(region.forward(f), nn::constant(gt_r), edge.forward(f), nn::constant(gt_e),
                    w);
  };
  Var loss = loss_fn();
  nn::backward(loss);
  Var* stem = enc_params.find("enc.stem.w");
  REQUIRE(stem != nullptr);
  double gnorm = 0.0;
  const float* g = stem->grad().data();
  for (int64_t i = 0; i < stem->value().numel(); ++i) gnorm += static_cast<double>(g[i]) * g[i];
  gnorm = std::sqrt(gnorm);
  CHECK(gnorm > 0.0);

  SUBCASE("stem-weight gradient matches a directional finite difference") {
    // perturb the stem weights along the normalized analytic gradient
    std::vector<float> dir(static_cast<size_t>(stem->value().numel()));
    for (size_t i = 0; i < dir.size(); ++i) dir[i] = static_cast<float>(g[i] / gnorm);
    const float eps = 1e-4f;  // small enough to stay on this side of every kink
    auto eval_at = [&](float s) {
      Tensor saved = stem->value();
      for (size_t i = 0; i < dir.size(); ++i) stem->value().data()[i] += s * dir[i];
      const double v = loss_fn().value().item();
      stem->value() = saved;
      return v;
    };
    const double fd = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
    CHECK(std::fabs(fd - gnorm) / gnorm < 1e-3);
  }
  enc_params.set_requires_grad(false);
}

TEST_CASE("fuse: empty inputs, solid region, flood-filled edge, superset property") {
  SUBCASE("both cues empty gives an empty mask") {
    Mask r(16, 16), e(16, 16);
    CHECK(fuse_masks(r, e).sum() == 0.0);
  }
  SUBCASE("solid region with empty edge passes through") {
    Mask r(16, 16), e(16, 16);
    for (int i = 3; i < 13; ++i)
      for (int j = 3; j < 13; ++j) r.at(i, j) = 1.0f;
    Mask fused = fuse_masks(r, e);
    CHECK(fused.v == r.v);
  }
  SUBCASE("hollow edge square is filled to a solid block") {
    Mask r(16, 16), e(16, 16);
    for (int k = 3; k < 13; ++k) {
      e.at(3, k) = e.at(12, k) = 1.0f;
      e.at(k, 3) = e.at(k, 12) = 1.0f;
    }
    Mask fused = fuse_masks(r, e);
    CHECK(fused.sum() == 100.0);  // the filled 10x10 block
    for (int i = 3; i < 13; ++i)
      for (int j = 3; j < 13; ++j) CHECK(fused.at(i, j) == 1.0f);
  }
  SUBCASE("fused mask always contains the binarized region cue") {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
      Mask r(12, 12), e(12, 12);
      for (auto& v : r.v) v = uniform(rng, 0.0f, 1.0f);
      for (auto& v : e.v) v = uniform(rng, 0.0f, 1.0f);
      Mask fused = fuse_masks(r, e);
      for (size_t i = 0; i < r.v.size(); ++i)
        if (r.v[i] >= 0.5f) CHECK(fused.v[i] == 1.0f);
    }
  }
  SUBCASE("an open edge with a closable gap is bridged by the closing step") {
    Mask r(16, 16), e(16, 16);
    for (int k = 3; k < 13; ++k) {
      e.at(3, k) = e.at(12, k) = 1.0f;
      e.at(k, 3) = e.at(k, 12) = 1.0f;
    }
    e.at(7, 3) = 0.0f;  // one-pixel break in the loop
    Mask fused = fuse_masks(r, e, FuseConfig{0.5f, 3});
    CHECK(fused.at(7, 7) == 1.0f);  // interior still filled
  }
}
