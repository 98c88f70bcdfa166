#include "patchdef/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patchdef {

using nn::Var;

void LossWeights::validate() const {
  if (alpha < 0 || lambda_edge < 0 || lambda_fm < 0 || lambda_gan < 0 || lambda_prl < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
  for (size_t i = 1; i < beta.size(); ++i)
    if (beta[i] < beta[i - 1])
      throw std::invalid_argument("beta weights must be nondecreasing with tap depth");
}

std::vector<float> LossWeights::geometric_beta(int n_taps) {
  std::vector<float> b(static_cast<size_t>(n_taps));
  double total = 0.0;
  for (int i = 0; i < n_taps; ++i) total += std::pow(2.0, i);
  for (int i = 0; i < n_taps; ++i)
    b[static_cast<size_t>(i)] = static_cast<float>(std::pow(2.0, i) / total);
  return b;
}

float auto_alpha(const nn::Tensor& targets, float lo, float hi) {
  double pos = 0.0;
  const float* p = targets.data();
  for (int64_t i = 0; i < targets.numel(); ++i) pos += p[i];
  const double neg = static_cast<double>(targets.numel()) - pos;
  if (pos <= 0.0) return lo;
  return std::clamp(static_cast<float>(neg / pos), lo, hi);
}

Var hole_loss(const Var& pred, const Var& truth, float alpha) {
  if (!pred.value().same_shape(truth.value()))
    throw std::invalid_argument("hole_loss: shape mismatch " +
                                nn::Tensor::shape_str(pred.shape()) + " vs " +
                                nn::Tensor::shape_str(truth.shape()));
  Var over = nn::relu(nn::sub(pred, truth));
  Var under = nn::relu(nn::sub(truth, pred));
  return nn::mean_all(nn::add(over, nn::mul_scalar(under, alpha)));
}

Var prl_loss(const Var& region_pred, const Var& region_truth, const Var& edge_pred,
             const Var& edge_truth, const LossWeights& w) {
  Var region_term = hole_loss(region_pred, region_truth, w.alpha);
  Var edge_term = hole_loss(edge_pred, edge_truth, w.alpha);
  return nn::add(region_term, nn::mul_scalar(edge_term, w.lambda_edge));
}

Var fm_loss(const Var& x_hat, const Var& x, const FeatureExtractor& extractor,
            const std::vector<float>& beta) {
  if (static_cast<int>(beta.size()) != extractor.num_taps())
    throw std::invalid_argument("fm_loss: beta size " + std::to_string(beta.size()) +
                                " != extractor taps " + std::to_string(extractor.num_taps()));
  auto taps_hat = extractor.taps(x_hat);
  auto taps_ref = extractor.taps(nn::detach(x));
  Var total = nn::constant(nn::Tensor::scalar(0.0f));
  for (size_t i = 0; i < taps_hat.size(); ++i) {
    Var diff = nn::mean_all(nn::abs_op(nn::sub(taps_hat[i], taps_ref[i])));
    total = nn::add(total, nn::mul_scalar(diff, beta[i]));
  }
  return total;
}

Discriminator::Discriminator(int image_size, Rng& rng) {
  if (image_size % 32 != 0)
    throw std::invalid_argument("discriminator: image size must be divisible by 32");
  const int chans[5] = {64, 128, 256, 512, 512};
  int in_ch = 3;
  for (int i = 0; i < 5; ++i) {
    convs_.emplace_back(in_ch, chans[i], 3, 2, 1, rng);
    in_ch = chans[i];
  }
  const int side = image_size / 32;
  head_ = nn::Linear(512 * side * side, 1, rng);
}

Var Discriminator::logits(const Var& x) const {
  Var h = x;
  for (const auto& c : convs_) h = nn::leaky_relu(c.forward(h), 0.2f);
  return head_.forward(nn::flatten2(h));
}

Var Discriminator::probability(const Var& x) const { return nn::sigmoid(logits(x)); }

void Discriminator::params(nn::ParamMap& m, const std::string& prefix) {
  for (size_t i = 0; i < convs_.size(); ++i)
    convs_[i].params(m, prefix + ".conv" + std::to_string(i + 1));
  head_.params(m, prefix + ".head");
}

GanTerms gan_losses(const LogitFn& disc_logits, const Var& x_hat, const Var& x) {
  // -log sigmoid(z) = softplus(-z);  -log(1 - sigmoid(z)) = softplus(z)
  Var z_fake = disc_logits(x_hat);
  Var z_fake_d = disc_logits(nn::detach(x_hat));
  Var z_real = disc_logits(x);
  GanTerms t;
  t.g_term = nn::mean_all(nn::softplus(nn::mul_scalar(z_fake, -1.0f)));
  t.d_term = nn::add(nn::mean_all(nn::softplus(nn::mul_scalar(z_real, -1.0f))),
                     nn::mean_all(nn::softplus(z_fake_d)));
  return t;
}

GanTerms gan_losses(const Discriminator& disc, const Var& x_hat, const Var& x) {
  return gan_losses([&disc](const Var& v) { return disc.logits(v); }, x_hat, x);
}

GeneratorLossTerms generator_loss(const Var& x_hat, const Var& x, const Var& region_pred,
                                  const Var& region_truth, const Var& edge_pred,
                                  const Var& edge_truth, const LossWeights& w,
                                  const FeatureExtractor& extractor, const LogitFn& disc_logits) {
  GeneratorLossTerms t;
  t.l1 = nn::mean_all(nn::abs_op(nn::sub(x_hat, x)));
  t.fm = fm_loss(x_hat, x, extractor, w.beta);
  t.gan_g = gan_losses(disc_logits, x_hat, x).g_term;
  Var total = nn::add(t.l1, nn::mul_scalar(t.fm, w.lambda_fm));
  total = nn::add(total, nn::mul_scalar(t.gan_g, w.lambda_gan));
  if (region_pred.defined()) {
    t.prl = prl_loss(region_pred, region_truth, edge_pred, edge_truth, w);
    total = nn::add(total, nn::mul_scalar(t.prl, w.lambda_prl));
  } else {
    t.prl = nn::constant(nn::Tensor::scalar(0.0f));
  }
  t.total = total;
  return t;
}

}  // namespace patchdef
