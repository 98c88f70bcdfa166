#pragma once

#include <functional>
#include <vector>

#include "patchdef/layers.hpp"
#include "patchdef/victim.hpp"

namespace patchdef {

struct LossWeights {
  float alpha = 1.0f;  // asymmetric weight of Eq-style hole loss
  bool alpha_auto = true;
  float alpha_clip_lo = 1.0f, alpha_clip_hi = 200.0f;
  float lambda_edge = 1.0f;
  float lambda_fm = 1.0f;
  float lambda_gan = 0.1f;
  float lambda_prl = 1.0f;
  std::vector<float> beta;  // one weight per extractor tap, nondecreasing

  void validate() const;
  /// Geometric schedule 2^i / sum(2^j): later (deeper) taps weigh more.
  static std::vector<float> geometric_beta(int n_taps);
};

/// Class-rebalancing weight: (negative count)/(positive count) over the batch
/// of targets, clipped to [lo, hi]. Falls back to lo when there are no
/// positives.
float auto_alpha(const nn::Tensor& targets, float lo, float hi);

/// mean( relu(pred - truth) + alpha * relu(truth - pred) )
nn::Var hole_loss(const nn::Var& pred, const nn::Var& truth, float alpha);

/// hole_loss(region) + lambda_edge * hole_loss(edge), same alpha in both terms.
nn::Var prl_loss(const nn::Var& region_pred, const nn::Var& region_truth,
                 const nn::Var& edge_pred, const nn::Var& edge_truth, const LossWeights& w);

/// sum_i beta[i] * mean|V_i(x) - V_i(x_hat)| over the frozen extractor taps.
nn::Var fm_loss(const nn::Var& x_hat, const nn::Var& x, const FeatureExtractor& extractor,
                const std::vector<float>& beta);

/// 5 stride-2 convolutions (64..512 channels, leaky ReLU) and a fully
/// connected head producing one real/fake logit per sample.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int image_size, Rng& rng);

  nn::Var logits(const nn::Var& x) const;        // (N,1)
  nn::Var probability(const nn::Var& x) const;   // sigmoid(logits)
  void params(nn::ParamMap& m, const std::string& prefix);

 private:
  std::vector<nn::Conv2d> convs_;
  nn::Linear head_;
};

using LogitFn = std::function<nn::Var(const nn::Var&)>;

struct GanTerms {
  nn::Var g_term;  // -mean log D(x_hat): generator ascent direction
  nn::Var d_term;  // -mean log D(x) - mean log(1 - D(detached x_hat))
};

/// Non-saturating GAN losses; x_hat is detached inside the discriminator term.
GanTerms gan_losses(const LogitFn& disc_logits, const nn::Var& x_hat, const nn::Var& x);
GanTerms gan_losses(const Discriminator& disc, const nn::Var& x_hat, const nn::Var& x);

struct GeneratorLossTerms {
  nn::Var total;
  nn::Var l1, fm, gan_g, prl;
};

/// L1(x_hat,x) + lambda_fm*fm + lambda_gan*g_term + lambda_prl*prl_loss.
/// Pass undefined Vars for the prl predictions to drop that term (weight 0).
GeneratorLossTerms generator_loss(const nn::Var& x_hat, const nn::Var& x,
                                  const nn::Var& region_pred, const nn::Var& region_truth,
                                  const nn::Var& edge_pred, const nn::Var& edge_truth,
                                  const LossWeights& w, const FeatureExtractor& extractor,
                                  const LogitFn& disc_logits);

}  // namespace patchdef
