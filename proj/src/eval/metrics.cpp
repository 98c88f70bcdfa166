#include "patchdef/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace patchdef {

double top1_accuracy(const VictimClassifier& model, const std::vector<Image>& images,
                     const std::vector<int>& labels) {
  if (images.empty()) throw ImageError("top1_accuracy: empty evaluation set");
  if (images.size() != labels.size())
    throw ImageError("top1_accuracy: image/label count mismatch");
  int correct = 0;
  constexpr size_t kChunk = 32;
  for (size_t off = 0; off < images.size(); off += kChunk) {
    const size_t end = std::min(images.size(), off + kChunk);
    std::vector<const Image*> xs;
    for (size_t i = off; i < end; ++i) xs.push_back(&images[i]);
    auto probs = model.forward_batch(xs);
    for (size_t i = off; i < end; ++i) {
      const auto& p = probs[i - off];
      const int arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      if (arg == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

namespace {
constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (0.01 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWin * kWin);
    double total = 0.0;
    const int r = kWin / 2;
    for (int i = 0; i < kWin; ++i)
      for (int j = 0; j < kWin; ++j) {
        const double d2 = (i - r) * (i - r) + (j - r) * (j - r);
        v[i * kWin + j] = std::exp(-d2 / (2.0 * kSigma * kSigma));
        total += v[i * kWin + j];
      }
    for (auto& x : v) x /= total;
    return v;
  }();
  return w;
}
}  // namespace

double ssim(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w) throw ImageError("ssim: image size mismatch");
  if (a.h < kWin || a.w < kWin)
    throw ImageError("ssim: image smaller than the 11x11 window");
  const auto& win = gaussian_window();
  double total = 0.0;
  int64_t count = 0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i + kWin <= a.h; ++i)
      for (int j = 0; j + kWin <= a.w; ++j) {
        double mu_a = 0, mu_b = 0;
        for (int u = 0; u < kWin; ++u)
          for (int v = 0; v < kWin; ++v) {
            const double w = win[u * kWin + v];
            mu_a += w * a.at(c, i + u, j + v);
            mu_b += w * b.at(c, i + u, j + v);
          }
        double va = 0, vb = 0, cov = 0;
        for (int u = 0; u < kWin; ++u)
          for (int v = 0; v < kWin; ++v) {
            const double w = win[u * kWin + v];
            const double da = a.at(c, i + u, j + v) - mu_a;
            const double db = b.at(c, i + u, j + v) - mu_b;
            va += w * da * da;
            vb += w * db * db;
            cov += w * da * db;
          }
        const double s = ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                         ((mu_a * mu_a + mu_b * mu_b + kC1) * (va + vb + kC2));
        total += s;
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

double psnr(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w) throw ImageError("psnr: image size mismatch");
  double se = 0.0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    const double d = static_cast<double>(a.px[i]) - b.px[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.px.size());
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double mask_iou(const Mask& pred, const Mask& truth) {
  if (pred.h != truth.h || pred.w != truth.w) throw ImageError("mask_iou: size mismatch");
  validate_binary_mask(pred, "pred");
  validate_binary_mask(truth, "truth");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] == 1.0f, t = truth.v[i] == 1.0f;
    inter += (p && t) ? 1 : 0;
    uni += (p || t) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace patchdef
