#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "patchdef/image.hpp"
#include "patchdef/rng.hpp"

using namespace patchdef;

namespace {

Image const_image(int h, int w, float r, float g, float b) {
  Image img(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      img.at(0, i, j) = r;
      img.at(1, i, j) = g;
      img.at(2, i, j) = b;
    }
  return img;
}

Mask mask_of(int h, int w, std::initializer_list<int> set_flat) {
  Mask m(h, w);
  for (int idx : set_flat) m.v[static_cast<size_t>(idx)] = 1.0f;
  return m;
}

// brute-force dilation oracle: set every offset within the structuring element
Mask dilate_oracle(const Mask& m, int k, int dil) {
  const int r = k / 2;
  Mask out(m.h, m.w);
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j) {
      bool hit = false;
      for (int di = -r; di <= r && !hit; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const int ii = i - di * dil, jj = j - dj * dil;
          if (ii >= 0 && ii < m.h && jj >= 0 && jj < m.w && m.at(ii, jj) == 1.0f) {
            hit = true;
            break;
          }
        }
      out.at(i, j) = hit ? 1.0f : 0.0f;
    }
  return out;
}

bool mask_subset(const Mask& a, const Mask& b) {
  for (size_t i = 0; i < a.v.size(); ++i)
    if (a.v[i] > b.v[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("compose_mask: zero, one and mixed masks") {
  Image clean = const_image(2, 2, 0.0f, 0.0f, 0.0f);
  clean.at(0, 1, 0) = clean.at(1, 1, 0) = clean.at(2, 1, 0) = 1.0f;
  clean.at(0, 1, 1) = clean.at(1, 1, 1) = clean.at(2, 1, 1) = 1.0f;
  Image pert = const_image(2, 2, 1.0f, 1.0f, 1.0f);
  pert.at(0, 1, 0) = pert.at(1, 1, 0) = pert.at(2, 1, 0) = 0.0f;
  pert.at(0, 1, 1) = pert.at(1, 1, 1) = pert.at(2, 1, 1) = 0.0f;

  SUBCASE("all-zero mask returns clean exactly") {
    Mask m(2, 2);
    Image out = compose_mask(clean, pert, m);
    CHECK(out.px == clean.px);
  }
  SUBCASE("all-one mask returns perturbed exactly") {
    Mask m(2, 2);
    for (auto& v : m.v) v = 1.0f;
    Image out = compose_mask(clean, pert, m);
    CHECK(out.px == pert.px);
  }
  SUBCASE("hand-evaluated 2x2 blend") {
    // clean rows [[0,0],[1,1]], perturbed [[1,1],[0,0]], mask [[1,0],[0,1]]
    Mask m = mask_of(2, 2, {0, 3});
    Image out = compose_mask(clean, pert, m);
    for (int c = 0; c < 3; ++c) {
      CHECK(out.at(c, 0, 0) == 1.0f);
      CHECK(out.at(c, 0, 1) == 0.0f);
      CHECK(out.at(c, 1, 0) == 1.0f);
      CHECK(out.at(c, 1, 1) == 0.0f);
    }
  }
  SUBCASE("shape mismatch names the operand") {
    Mask m(3, 2);
    CHECK_THROWS_WITH_AS(compose_mask(clean, pert, m),
                         doctest::Contains("mask"), ImageError);
    Image bad = const_image(3, 3, 0, 0, 0);
    CHECK_THROWS_WITH_AS(compose_mask(clean, bad, m), doctest::Contains("perturbed"), ImageError);
  }
  SUBCASE("idempotent in the mask") {
    Mask m = mask_of(2, 2, {1, 2});
    Image once = compose_mask(clean, pert, m);
    Image twice = compose_mask(once, pert, m);
    CHECK(once.px == twice.px);
  }
}

TEST_CASE("apply_patch: occupancy arithmetic, verbatim placement, round trip") {
  SUBCASE("5% of 256x256 gives side 57 and mask sum 57^2") {
    const int side = patch_side_for_occupancy(0.05, 256, 256);
    CHECK(side == 57);
    Image img = const_image(256, 256, 0.5f, 0.5f, 0.5f);
    PatchSpec spec;
    spec.ph = spec.pw = side;
    spec.px.assign(static_cast<size_t>(3) * side * side, 0.9f);
    spec.row = 10;
    spec.col = 20;
    auto [patched, mask] = apply_patch(img, spec);
    CHECK(mask.sum() == doctest::Approx(57.0 * 57.0));
  }
  SUBCASE("identity transform pastes patch pixels verbatim") {
    Image img = const_image(8, 8, 0.2f, 0.3f, 0.4f);
    PatchSpec spec;
    spec.ph = spec.pw = 3;
    spec.px.resize(27);
    Rng rng(5);
    for (auto& v : spec.px) v = uniform(rng, 0.0f, 1.0f);
    spec.row = 2;
    spec.col = 4;
    auto [patched, mask] = apply_patch(img, spec);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          CHECK(patched.at(c, 2 + i, 4 + j) == spec.at(c, i, j));
    // untouched pixels bit-identical
    CHECK(patched.at(0, 0, 0) == img.at(0, 0, 0));
    CHECK(patched.at(2, 7, 7) == img.at(2, 7, 7));
    SUBCASE("compose_mask round trip reproduces the patched image") {
      Image recomposed = compose_mask(img, patched, mask);
      CHECK(recomposed.px == patched.px);
    }
  }
  SUBCASE("exactly (1 - occupancy) of pixels untouched, rotated case included") {
    Image img(16, 16);
    Rng rng(7);
    for (auto& v : img.px) v = uniform(rng, 0.0f, 1.0f);
    PatchSpec spec;
    spec.ph = spec.pw = 4;
    spec.px.assign(48, 0.5f);
    spec.row = 3;
    spec.col = 5;
    spec.tf.rotation_deg = 17.0f;
    spec.tf.scale = 1.05f;
    auto [patched, mask] = apply_patch(img, spec);
    int untouched = 0;
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) {
        if (mask.at(i, j) == 0.0f) {
          ++untouched;
          for (int c = 0; c < 3; ++c) CHECK(patched.at(c, i, j) == img.at(c, i, j));
        }
      }
    CHECK(untouched == 256 - static_cast<int>(mask.sum()));
    CHECK(mask.sum() > 0);
  }
  SUBCASE("out-of-bounds placement throws") {
    Image img = const_image(8, 8, 0.1f, 0.1f, 0.1f);
    PatchSpec spec;
    spec.ph = spec.pw = 3;
    spec.px.assign(27, 0.5f);
    spec.row = 6;
    spec.col = 6;
    CHECK_THROWS_AS(apply_patch(img, spec), ImageError);
  }
}

TEST_CASE("dilate_mask: oracle cases and properties") {
  SUBCASE("single center pixel, k=3 becomes a 3x3 block") {
    Mask m = mask_of(5, 5, {12});
    Mask d = dilate_mask(m, 3, 1);
    CHECK(d.sum() == 9.0);
    for (int i = 1; i <= 3; ++i)
      for (int j = 1; j <= 3; ++j) CHECK(d.at(i, j) == 1.0f);
  }
  SUBCASE("all-zero mask stays empty") {
    Mask m(4, 4);
    CHECK(dilate_mask(m, 3, 1).sum() == 0.0);
  }
  SUBCASE("corner pixel clips at the border: 2x2 block") {
    Mask m = mask_of(5, 5, {0});
    Mask d = dilate_mask(m, 3, 1);
    CHECK(d.sum() == 4.0);
    CHECK(d.at(0, 0) == 1.0f);
    CHECK(d.at(1, 1) == 1.0f);
  }
  SUBCASE("even kernel throws") {
    Mask m(4, 4);
    CHECK_THROWS_AS(dilate_mask(m, 4, 1), ImageError);
  }
  SUBCASE("matches the brute-force oracle with dilation rate 2") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Mask m(9, 9);
      for (auto& v : m.v) v = uniform(rng, 0.0f, 1.0f) < 0.2f ? 1.0f : 0.0f;
      for (int k : {3, 5}) {
        Mask got = dilate_mask(m, k, 2);
        Mask want = dilate_oracle(m, k, 2);
        CHECK(got.v == want.v);
      }
    }
  }
  SUBCASE("monotone and extensive over all 512 3x3 masks") {
    for (int bits_a = 0; bits_a < 512; ++bits_a) {
      Mask a(3, 3);
      for (int p = 0; p < 9; ++p) a.v[static_cast<size_t>(p)] = (bits_a >> p) & 1 ? 1.0f : 0.0f;
      Mask da = dilate_mask(a, 3, 1);
      REQUIRE(mask_subset(a, da));  // extensive
      // monotone against supersets formed by setting one extra bit
      for (int p = 0; p < 9; ++p) {
        if ((bits_a >> p) & 1) continue;
        Mask b = a;
        b.v[static_cast<size_t>(p)] = 1.0f;
        REQUIRE(mask_subset(da, dilate_mask(b, 3, 1)));
      }
    }
  }
}

TEST_CASE("ring_region: counts, emptiness, disjointness, containment error") {
  SUBCASE("3x3 block dilated to 5x5 leaves a 16-pixel ring") {
    Mask inner(7, 7);
    for (int i = 2; i <= 4; ++i)
      for (int j = 2; j <= 4; ++j) inner.at(i, j) = 1.0f;
    Mask d = dilate_mask(inner, 3, 1);
    Mask ring = ring_region(d, inner);
    CHECK(ring.sum() == 16.0);
  }
  SUBCASE("dilated == mask gives an empty ring") {
    Mask m = mask_of(4, 4, {5, 6});
    Mask ring = ring_region(m, m);
    CHECK(ring.sum() == 0.0);
  }
  SUBCASE("ring is always disjoint from the mask") {
    Rng rng(13);
    for (int t = 0; t < 30; ++t) {
      Mask m(8, 8);
      for (auto& v : m.v) v = uniform(rng, 0.0f, 1.0f) < 0.3f ? 1.0f : 0.0f;
      Mask d = dilate_mask(m, 3, 1);
      Mask ring = ring_region(d, m);
      for (size_t i = 0; i < ring.v.size(); ++i) {
        CHECK(ring.v[i] * m.v[i] == 0.0f);
        CHECK(ring.v[i] <= d.v[i]);
      }
    }
  }
  SUBCASE("containment violation throws") {
    Mask m = mask_of(3, 3, {4});
    Mask not_superset(3, 3);
    CHECK_THROWS_AS(ring_region(not_superset, m), ImageError);
  }
}

TEST_CASE("mask_to_edge: oracle cases and subset property") {
  SUBCASE("empty mask gives empty edge") {
    Mask m(6, 6);
    CHECK(mask_to_edge(m, 1).sum() == 0.0);
  }
  SUBCASE("5x5 solid block, thickness 1 gives a 16-pixel hollow square") {
    Mask m(9, 9);
    for (int i = 2; i <= 6; ++i)
      for (int j = 2; j <= 6; ++j) m.at(i, j) = 1.0f;
    EdgeMap e = mask_to_edge(m, 1);
    CHECK(e.sum() == 16.0);
    CHECK(e.at(2, 2) == 1.0f);
    CHECK(e.at(4, 4) == 0.0f);  // interior survives erosion
  }
  SUBCASE("full-image mask gives a border frame") {
    Mask m(6, 6);
    for (auto& v : m.v) v = 1.0f;
    EdgeMap e = mask_to_edge(m, 1);
    CHECK(e.sum() == 20.0);  // 6*6 - 4*4 interior
    CHECK(e.at(0, 0) == 1.0f);
    CHECK(e.at(3, 3) == 0.0f);
  }
  SUBCASE("edge is a subset of the mask") {
    Rng rng(17);
    for (int t = 0; t < 20; ++t) {
      Mask m(8, 8);
      for (auto& v : m.v) v = uniform(rng, 0.0f, 1.0f) < 0.4f ? 1.0f : 0.0f;
      EdgeMap e = mask_to_edge(m, 1);
      CHECK(mask_subset(e, m));
    }
  }
}

TEST_CASE("resize_pad: identity, aspect arithmetic, range containment") {
  SUBCASE("target size input is returned unchanged") {
    Image img = const_image(16, 16, 0.3f, 0.5f, 0.7f);
    Image out = resize_pad(img, 16, 16);
    CHECK(out.px == img.px);
  }
  SUBCASE("100x200 to 256x256 scales to 128x256 with 64-row pads") {
    Image img = const_image(100, 200, 0.5f, 0.5f, 0.5f);
    Image out = resize_pad(img, 256, 256);
    CHECK(out.h == 256);
    CHECK(out.w == 256);
    // rows 0..63 and 192..255 are zero padding; the center is content
    for (int j = 0; j < 256; ++j) {
      CHECK(out.at(0, 0, j) == 0.0f);
      CHECK(out.at(0, 63, j) == 0.0f);
      CHECK(out.at(0, 64, j) == doctest::Approx(0.5f));
      CHECK(out.at(0, 191, j) == doctest::Approx(0.5f));
      CHECK(out.at(0, 192, j) == 0.0f);
      CHECK(out.at(0, 255, j) == 0.0f);
    }
  }
  SUBCASE("output values stay within input range plus zero") {
    Rng rng(19);
    Image img(20, 30);
    float lo = 1.0f, hi = 0.0f;
    for (auto& v : img.px) {
      v = uniform(rng, 0.2f, 0.8f);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    Image out = resize_pad(img, 32, 32);
    for (float v : out.px) {
      const bool within = (v >= lo - 1e-6f && v <= hi + 1e-6f) || v == 0.0f;
      CHECK(within);
    }
  }
  SUBCASE("non-positive target throws") {
    Image img = const_image(4, 4, 0.1f, 0.1f, 0.1f);
    CHECK_THROWS_AS(resize_pad(img, 0, 10), ImageError);
  }
}
