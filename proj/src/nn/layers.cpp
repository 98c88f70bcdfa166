#include "patchdef/layers.hpp"

#include <cmath>
#include <cstring>

namespace patchdef::nn {

uint64_t ParamMap::hash() const {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, v] : items) {
    feed(name.data(), name.size());
    feed(v.value().data(), sizeof(float) * static_cast<size_t>(v.value().numel()));
  }
  return h;
}

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
  float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = normal(rng, 0.0f, stddev);
  return t;
}

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng, bool bias)
    : stride_(stride), pad_(pad) {
  w_ = Var(he_normal({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng), true);
  if (bias) b_ = Var(Tensor({out_ch}), true);
}

Linear::Linear(int in_dim, int out_dim, Rng& rng) {
  w_ = Var(he_normal({out_dim, in_dim}, in_dim, rng), true);
  b_ = Var(Tensor({out_dim}), true);
}

ResBlock::ResBlock(int in_ch, int out_ch, int stride, Rng& rng) {
  conv1_ = Conv2d(in_ch, out_ch, 3, stride, 1, rng);
  conv2_ = Conv2d(out_ch, out_ch, 3, 1, 1, rng);
  has_proj_ = (in_ch != out_ch) || (stride != 1);
  if (has_proj_) proj_ = Conv2d(in_ch, out_ch, 1, stride, 0, rng, /*bias=*/false);
}

Var ResBlock::forward(const Var& x) const {
  Var h = conv2_.forward(elu(conv1_.forward(x)));
  Var skip = has_proj_ ? proj_.forward(x) : x;
  return elu(add(h, skip));
}

void ResBlock::params(ParamMap& m, const std::string& prefix) {
  conv1_.params(m, prefix + ".conv1");
  conv2_.params(m, prefix + ".conv2");
  if (has_proj_) proj_.params(m, prefix + ".proj");
}

CbamBlock::CbamBlock(int channels, Rng& rng, int reduction, int spatial_kernel) {
  int hidden = std::max(1, channels / reduction);
  fc1_ = Linear(channels, hidden, rng);
  fc2_ = Linear(hidden, channels, rng);
  spatial_ = Conv2d(2, 1, spatial_kernel, 1, spatial_kernel / 2, rng);
}

std::pair<Var, Var> CbamBlock::attention(const Var& x) const {
  const auto& s = x.shape();
  const int N = s[0], C = s[1];
  Var avg_mlp = fc2_.forward(relu(fc1_.forward(reshape(global_avg_pool(x), {N, C}))));
  Var max_mlp = fc2_.forward(relu(fc1_.forward(reshape(global_max_pool(x), {N, C}))));
  Var ch_scale = sigmoid(reshape(add(avg_mlp, max_mlp), {N, C, 1, 1}));
  Var xc = mul(x, ch_scale);
  Var sp_in = concat_channels({channel_mean(xc), channel_max(xc)});
  Var sp_scale = sigmoid(spatial_.forward(sp_in));  // (N,1,H,W)
  return {ch_scale, sp_scale};
}

Var CbamBlock::forward(const Var& x) const {
  auto [ch_scale, sp_scale] = attention(x);
  Var xc = mul(x, ch_scale);
  return relu(mul(xc, sp_scale));
}

void CbamBlock::params(ParamMap& m, const std::string& prefix) {
  fc1_.params(m, prefix + ".fc1");
  fc2_.params(m, prefix + ".fc2");
  spatial_.params(m, prefix + ".spatial");
}

MaskedStats masked_stats(const Var& x, const Var& weight) {
  // weight: (N,1,H,W); x: (N,C,H,W). Zero-weight samples yield zero stats
  // (their contribution is masked off downstream anyway).
  Var wsum = clamp_min(sum_spatial(weight), 1e-12f);    // (N,1,1,1)
  Var mean = div(sum_spatial(mul(x, weight)), wsum);    // (N,C,1,1)
  Var centered = sub(x, mean);
  Var var = div(sum_spatial(mul(mul(centered, centered), weight)), wsum);
  return {mean, sqrt_op(var)};
}

Var context_normalize(const Var& x, const Var& hole, const Var& ring, float epsilon,
                      bool* ring_was_empty) {
  const auto& hs = hole.shape();
  const auto& xs = x.shape();
  if (hs.size() != 4 || hs[1] != 1 || hs[2] != xs[2] || hs[3] != xs[3])
    throw std::invalid_argument("context_normalize: hole mask must be (N,1,H,W) matching x");
  if (!ring.value().same_shape(hole.value()))
    throw std::invalid_argument("context_normalize: ring/hole shape mismatch");

  // Degenerate rings fall back to whole-image statistics, per sample.
  const int N = hs[0];
  const int64_t plane = static_cast<int64_t>(hs[2]) * hs[3];
  const float* rp = ring.value().data();
  bool any_empty_ring = false, all_empty_ring = true;
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (int64_t i = 0; i < plane; ++i) s += rp[n * plane + i];
    if (s <= 0.0)
      any_empty_ring = true;
    else
      all_empty_ring = false;
  }
  Var context = ring;
  if (ring_was_empty) *ring_was_empty = any_empty_ring;
  if (any_empty_ring) {
    Tensor ctx(hole.value().shape());
    float* cp = ctx.data();
    for (int n = 0; n < N; ++n) {
      double s = 0.0;
      for (int64_t i = 0; i < plane; ++i) s += rp[n * plane + i];
      for (int64_t i = 0; i < plane; ++i)
        cp[n * plane + i] = (s <= 0.0) ? 1.0f : rp[n * plane + i];
    }
    context = constant(std::move(ctx));
  }
  (void)all_empty_ring;

  double hole_total = 0.0;
  const float* hp = hole.value().data();
  for (int64_t i = 0; i < hole.value().numel(); ++i) hole_total += hp[i];
  if (hole_total <= 0.0) return x;  // nothing to normalize

  MaskedStats hole_stats = masked_stats(x, hole);
  MaskedStats ring_stats = masked_stats(x, context);
  Var normalized = add(
      mul(div(sub(x, hole_stats.mean), clamp_min(hole_stats.std, epsilon)), ring_stats.std),
      ring_stats.mean);
  // blend: inside hole use normalized, elsewhere pass through
  Var keep = add_scalar(mul_scalar(hole, -1.0f), 1.0f);  // 1 - hole
  return add(mul(normalized, hole), mul(x, keep));
}

ContextNormBlock::ContextNormBlock(int in_ch, int out_ch, Rng& rng, float epsilon)
    : epsilon_(epsilon) {
  conv_ = Conv2d(in_ch, out_ch, 3, 1, 1, rng);
}

Var ContextNormBlock::forward(const Var& x, const Var& hole, const Var& ring,
                              bool* ring_was_empty) const {
  return elu(context_normalize(conv_.forward(x), hole, ring, epsilon_, ring_was_empty));
}

}  // namespace patchdef::nn
