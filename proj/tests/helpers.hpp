#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "patchdef/autodiff.hpp"
#include "patchdef/rng.hpp"

namespace patchdef::testing {

inline nn::Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f,
                                float hi = 1.0f) {
  nn::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = uniform(rng, lo, hi);
  return t;
}

/// Central-difference check of d(scalar)/d(input) against the autodiff
/// gradient. Returns the relative L2 error over the probed elements.
inline double gradcheck(const std::function<nn::Var(const nn::Var&)>& f, const nn::Tensor& x0,
                        float eps = 1e-2f, int max_probes = 64, uint64_t seed = 99) {
  nn::Var x(x0, /*requires_grad=*/true);
  nn::Var y = f(x);
  nn::backward(y);
  std::vector<float> analytic(x.grad().data(), x.grad().data() + x0.numel());

  std::vector<int64_t> probes;
  if (x0.numel() <= max_probes) {
    for (int64_t i = 0; i < x0.numel(); ++i) probes.push_back(i);
  } else {
    Rng rng(seed);
    for (int i = 0; i < max_probes; ++i)
      probes.push_back(uniform_int(rng, 0, static_cast<int>(x0.numel()) - 1));
  }
  double num = 0.0, den = 0.0;
  for (int64_t i : probes) {
    nn::Tensor xp = x0, xm = x0;
    xp.data()[i] += eps;
    xm.data()[i] -= eps;
    const double fp = f(nn::Var(xp)).value().item();
    const double fm = f(nn::Var(xm)).value().item();
    const double fd = (fp - fm) / (2.0 * eps);
    const double d = fd - analytic[static_cast<size_t>(i)];
    num += d * d;
    den += fd * fd;
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

/// Directional finite-difference check along the (normalized) analytic
/// gradient: robust for deep graphs where per-coordinate differences drown in
/// float noise. Returns |fd - |g||| / |g|.
inline double gradcheck_directional(const std::function<nn::Var(const nn::Var&)>& f,
                                    const nn::Tensor& x0, float eps = 1e-3f) {
  nn::Var x(x0, true);
  nn::backward(f(x));
  const float* g = x.grad().data();
  double norm = 0.0;
  for (int64_t i = 0; i < x0.numel(); ++i) norm += static_cast<double>(g[i]) * g[i];
  norm = std::sqrt(norm);
  if (norm == 0.0) return 0.0;
  nn::Tensor xp = x0, xm = x0;
  for (int64_t i = 0; i < x0.numel(); ++i) {
    const float step = static_cast<float>(eps * g[i] / norm);
    xp.data()[i] += step;
    xm.data()[i] -= step;
  }
  const double fp = f(nn::Var(xp)).value().item();
  const double fm = f(nn::Var(xm)).value().item();
  const double fd = (fp - fm) / (2.0 * eps);
  return std::fabs(fd - norm) / norm;
}

/// Naive direct convolution used as the conv2d oracle.
inline nn::Tensor conv2d_oracle(const nn::Tensor& x, const nn::Tensor& w, const nn::Tensor& b,
                                int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int M = w.dim(0), k = w.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  nn::Tensor out({N, M, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m)
      for (int oi = 0; oi < Ho; ++oi)
        for (int oj = 0; oj < Wo; ++oj) {
          double acc = b.defined() ? b.data()[m] : 0.0;
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int ii = oi * stride - pad + ki, jj = oj * stride - pad + kj;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                acc += static_cast<double>(x.at(n, c, ii, jj)) * w.at(m, c, ki, kj);
              }
          out.at(n, m, oi, oj) = static_cast<float>(acc);
        }
  return out;
}

}  // namespace patchdef::testing
