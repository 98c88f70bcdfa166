#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "patchdef/losses.hpp"

using namespace patchdef;
using namespace patchdef::testing;
using nn::Tensor;
using nn::Var;

TEST_CASE("hole_loss: examples and properties") {
  SUBCASE("perfect prediction is zero") {
    Tensor t({1, 1, 2, 2}, {0.1f, 0.4f, 0.7f, 0.9f});
    CHECK(hole_loss(Var(t), Var(t), 3.0f).value().item() == 0.0f);
  }
  SUBCASE("alpha = 1 equals mean absolute error") {
    Rng rng(1);
    Tensor a = random_tensor({2, 1, 3, 3}, rng, 0.0f, 1.0f);
    Tensor b = random_tensor({2, 1, 3, 3}, rng, 0.0f, 1.0f);
    const double got = hole_loss(Var(a), Var(b), 1.0f).value().item();
    double mae = 0;
    for (int64_t i = 0; i < a.numel(); ++i) mae += std::fabs(a.data()[i] - b.data()[i]);
    mae /= static_cast<double>(a.numel());
    CHECK(got == doctest::Approx(mae).epsilon(1e-6));
  }
  SUBCASE("hand-computed asymmetric case") {
    // pred=[1,0], truth=[0,1], alpha=2 -> (1 + 2*1)/2 = 1.5
    Tensor p({2}, {1.0f, 0.0f});
    Tensor t({2}, {0.0f, 1.0f});
    CHECK(hole_loss(Var(p), Var(t), 2.0f).value().item() == doctest::Approx(1.5));
  }
  SUBCASE("nonnegative, zero iff equal") {
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
      Tensor a = random_tensor({8}, rng, 0.0f, 1.0f);
      Tensor b = random_tensor({8}, rng, 0.0f, 1.0f);
      const double v = hole_loss(Var(a), Var(b), 3.0f).value().item();
      CHECK(v >= 0.0);
      if (a.data()[0] != b.data()[0]) CHECK(v > 0.0);
    }
  }
  SUBCASE("weight/argument symmetry: L(p,t,a) == a * L(t,p,1/a)") {
    Rng rng(3);
    for (float alpha : {0.5f, 2.0f, 7.0f}) {
      Tensor a = random_tensor({16}, rng, 0.0f, 1.0f);
      Tensor b = random_tensor({16}, rng, 0.0f, 1.0f);
      const double lhs = hole_loss(Var(a), Var(b), alpha).value().item();
      const double rhs = alpha * hole_loss(Var(b), Var(a), 1.0f / alpha).value().item();
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
    }
  }
  SUBCASE("shape mismatch throws") {
    CHECK_THROWS(hole_loss(Var(Tensor({2})), Var(Tensor({3})), 1.0f));
  }
  SUBCASE("gradient passes finite differences away from kinks") {
    Rng rng(4);
    Tensor truth = random_tensor({1, 1, 4, 4}, rng, 0.0f, 0.3f);
    Tensor pred = random_tensor({1, 1, 4, 4}, rng, 0.5f, 0.9f);  // all strictly above truth
    CHECK(gradcheck([&](const Var& p) { return hole_loss(p, Var(truth), 2.5f); }, pred) < 1e-3);
  }
}

TEST_CASE("prl_loss: composition of two hole losses") {
  Rng rng(5);
  Tensor r_hat = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  Tensor r = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  Tensor e_hat = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  Tensor e = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  LossWeights w;
  w.alpha = 3.0f;
  SUBCASE("perfect predictions give zero") {
    LossWeights w1;
    w1.alpha = 2.0f;
    CHECK(prl_loss(Var(r), Var(r), Var(e), Var(e), w1).value().item() == 0.0f);
  }
  SUBCASE("lambda_edge = 0 reduces to the region term") {
    LossWeights w0 = w;
    w0.lambda_edge = 0.0f;
    const double got = prl_loss(Var(r_hat), Var(r), Var(e_hat), Var(e), w0).value().item();
    const double want = hole_loss(Var(r_hat), Var(r), w.alpha).value().item();
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
  }
  SUBCASE("known inputs decompose into the two hole losses") {
    w.lambda_edge = 0.7f;
    const double got = prl_loss(Var(r_hat), Var(r), Var(e_hat), Var(e), w).value().item();
    const double want = hole_loss(Var(r_hat), Var(r), w.alpha).value().item() +
                        0.7 * hole_loss(Var(e_hat), Var(e), w.alpha).value().item();
    CHECK(got == doctest::Approx(want).epsilon(1e-5));
  }
}

TEST_CASE("auto_alpha: class rebalancing with clipping") {
  Tensor t({1, 1, 4, 4});
  t.data()[0] = 1.0f;  // 1 positive, 15 negatives
  CHECK(auto_alpha(t, 1.0f, 200.0f) == doctest::Approx(15.0f));
  CHECK(auto_alpha(t, 1.0f, 10.0f) == doctest::Approx(10.0f));  // clipped
  Tensor empty({1, 1, 2, 2});
  CHECK(auto_alpha(empty, 1.0f, 200.0f) == 1.0f);  // no positives: lower clip
}

TEST_CASE("fm_loss: identity extractor, zero cases, pseudometric") {
  IdentityExtractor ident;
  Rng rng(6);
  Tensor a = random_tensor({1, 3, 4, 4}, rng, 0.0f, 1.0f);
  Tensor b = random_tensor({1, 3, 4, 4}, rng, 0.0f, 1.0f);
  Tensor c = random_tensor({1, 3, 4, 4}, rng, 0.0f, 1.0f);

  SUBCASE("identical inputs give zero") {
    CHECK(fm_loss(Var(a), Var(a), ident, {1.0f}).value().item() == 0.0f);
  }
  SUBCASE("zero beta gives zero") {
    CHECK(fm_loss(Var(a), Var(b), ident, {0.0f}).value().item() == 0.0f);
  }
  SUBCASE("single-tap identity with beta 1 equals mean absolute pixel difference") {
    double mae = 0;
    for (int64_t i = 0; i < a.numel(); ++i) mae += std::fabs(a.data()[i] - b.data()[i]);
    mae /= static_cast<double>(a.numel());
    CHECK(fm_loss(Var(a), Var(b), ident, {1.0f}).value().item() ==
          doctest::Approx(mae).epsilon(1e-6));
  }
  SUBCASE("beta length mismatch throws") {
    CHECK_THROWS(fm_loss(Var(a), Var(b), ident, {1.0f, 2.0f}));
  }
  SUBCASE("pseudometric: symmetry and triangle inequality") {
    auto d = [&](const Tensor& x, const Tensor& y) {
      return fm_loss(Var(x), Var(y), ident, {1.0f}).value().item();
    };
    CHECK(d(a, b) == doctest::Approx(d(b, a)).epsilon(1e-6));
    CHECK(d(a, c) <= d(a, b) + d(b, c) + 1e-6);
  }
  SUBCASE("geometric beta schedule is normalized and nondecreasing") {
    auto beta = LossWeights::geometric_beta(5);
    double sum = 0;
    for (size_t i = 0; i < beta.size(); ++i) {
      sum += beta[i];
      if (i) CHECK(beta[i] > beta[i - 1]);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(beta[4] == doctest::Approx(16.0 / 31.0).epsilon(1e-6));
  }
}

TEST_CASE("gan_losses: constant-discriminator closed forms and monotonicity") {
  Rng rng(7);
  Tensor x_hat = random_tensor({2, 3, 4, 4}, rng, 0.0f, 1.0f);
  Tensor x = random_tensor({2, 3, 4, 4}, rng, 0.0f, 1.0f);

  SUBCASE("D == 0.5 gives d_term = 2 log 2 and g_term = log 2") {
    LogitFn half = [](const Var& v) {
      return nn::constant(Tensor({v.shape()[0], 1}, 0.0f));  // sigmoid(0) = 0.5
    };
    GanTerms t = gan_losses(half, Var(x_hat), Var(x));
    CHECK(t.d_term.value().item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
    CHECK(t.g_term.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("d_term decreases as D(x) rises and D(x_hat) falls") {
    auto const_logit = [](float z) {
      return LogitFn([z](const Var& v) { return nn::constant(Tensor({v.shape()[0], 1}, z)); });
    };
    // better discriminator: higher logit on real, lower on fake
    LogitFn weak = const_logit(0.0f);
    // evaluate d_term with separable logits by composing two calls
    auto d_of = [&](float z_real, float z_fake) {
      Tensor zr({2, 1}, z_real), zf({2, 1}, z_fake);
      Var d = nn::add(nn::mean_all(nn::softplus(nn::mul_scalar(Var(zr), -1.0f))),
                      nn::mean_all(nn::softplus(Var(zf))));
      return d.value().item();
    };
    CHECK(d_of(2.0f, -2.0f) < d_of(0.0f, 0.0f));
    (void)weak;
  }
  SUBCASE("g-term gradient wrt x_hat passes finite differences through a real discriminator") {
    Rng rng2(8);
    Discriminator disc(32, rng2);
    Tensor probe = random_tensor({1, 3, 32, 32}, rng2, 0.2f, 0.8f);
    Tensor ref = random_tensor({1, 3, 32, 32}, rng2, 0.2f, 0.8f);
    CHECK(gradcheck_directional(
              [&](const Var& xh) { return gan_losses(disc, xh, Var(ref)).g_term; }, probe) < 1e-3);
  }
}

TEST_CASE("generator_loss: term elimination and recomposition") {
  Rng rng(9);
  IdentityExtractor ident;
  LogitFn half = [](const Var& v) {
    return nn::constant(Tensor({v.shape()[0], 1}, 0.0f));
  };
  Tensor x = random_tensor({1, 3, 4, 4}, rng, 0.0f, 1.0f);
  Tensor x_hat = random_tensor({1, 3, 4, 4}, rng, 0.0f, 1.0f);
  Tensor r = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  Tensor r_hat = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  Tensor e = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  Tensor e_hat = random_tensor({1, 1, 4, 4}, rng, 0.0f, 1.0f);
  LossWeights w;
  w.alpha = 2.0f;
  w.beta = {1.0f};

  SUBCASE("perfect reconstruction and masks with lambda_gan = 0 gives zero") {
    LossWeights w0 = w;
    w0.lambda_gan = 0.0f;
    auto t = generator_loss(Var(x), Var(x), Var(r), Var(r), Var(e), Var(e), w0, ident, half);
    CHECK(t.total.value().item() == doctest::Approx(0.0).epsilon(1e-7));
  }
  SUBCASE("all lambdas zero leaves plain mean absolute error") {
    LossWeights w0 = w;
    w0.lambda_fm = w0.lambda_gan = w0.lambda_prl = 0.0f;
    auto t = generator_loss(Var(x_hat), Var(x), Var(r_hat), Var(r), Var(e_hat), Var(e), w0, ident,
                            half);
    double mae = 0;
    for (int64_t i = 0; i < x.numel(); ++i) mae += std::fabs(x_hat.data()[i] - x.data()[i]);
    mae /= static_cast<double>(x.numel());
    CHECK(t.total.value().item() == doctest::Approx(mae).epsilon(1e-6));
  }
  SUBCASE("weighted sum matches independently computed terms") {
    w.lambda_fm = 0.4f;
    w.lambda_gan = 0.2f;
    w.lambda_prl = 0.6f;
    w.lambda_edge = 0.3f;
    auto t = generator_loss(Var(x_hat), Var(x), Var(r_hat), Var(r), Var(e_hat), Var(e), w, ident,
                            half);
    const double want = t.l1.value().item() + 0.4 * t.fm.value().item() +
                        0.2 * t.gan_g.value().item() + 0.6 * t.prl.value().item();
    CHECK(t.total.value().item() == doctest::Approx(want).epsilon(1e-5));
    // and each term against its own oracle
    CHECK(t.fm.value().item() ==
          doctest::Approx(fm_loss(Var(x_hat), Var(x), ident, w.beta).value().item()));
    CHECK(t.prl.value().item() ==
          doctest::Approx(
              prl_loss(Var(r_hat), Var(r), Var(e_hat), Var(e), w).value().item()));
  }
  SUBCASE("full generator loss gradient passes finite differences") {
    Rng rng2(10);
    Discriminator disc(32, rng2);
    Tensor probe = random_tensor({1, 3, 32, 32}, rng2, 0.55f, 0.95f);
    Tensor clean = random_tensor({1, 3, 32, 32}, rng2, 0.05f, 0.45f);
    LossWeights wg;
    wg.alpha = 2.0f;
    wg.beta = {1.0f};
    wg.lambda_fm = 0.5f;
    wg.lambda_gan = 0.1f;
    CHECK(gradcheck_directional(
              [&](const Var& xh) {
                return generator_loss(xh, Var(clean), Var(), Var(), Var(), Var(), wg, ident,
                                      [&disc](const Var& v) { return disc.logits(v); })
                    .total;
              },
              probe, 5e-3f) < 1e-3);
  }
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  w.beta = {0.5f, 0.3f};  // decreasing: invalid
  CHECK_THROWS(w.validate());
  w.beta = {0.3f, 0.5f};
  CHECK_NOTHROW(w.validate());
  w.lambda_fm = -1.0f;
  CHECK_THROWS(w.validate());
}
