#include "patchdef/victim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchdef/optim.hpp"
#include "patchdef/serialize.hpp"

namespace patchdef {

using nn::Tensor;
using nn::Var;

std::vector<float> VictimClassifier::forward(const Image& x) const {
  return forward_batch({&x})[0];
}

std::vector<float> VictimClassifier::logp_gradient(const Image& x, int cls) const {
  return logp_gradient_batch({&x}, {cls})[0];
}

int VictimClassifier::predict(const Image& x) const {
  auto p = forward(x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

Tensor ConvNetVictim::batch_tensor(const std::vector<const Image*>& xs) {
  if (xs.empty()) throw ImageError("batch_tensor: empty batch");
  const int h = xs[0]->h, w = xs[0]->w;
  Tensor t({static_cast<int>(xs.size()), 3, h, w});
  float* p = t.data();
  const size_t per = static_cast<size_t>(3) * h * w;
  for (size_t n = 0; n < xs.size(); ++n) {
    if (xs[n]->h != h || xs[n]->w != w)
      throw ImageError("batch_tensor: inconsistent image sizes in batch");
    std::copy(xs[n]->px.begin(), xs[n]->px.end(), p + n * per);
  }
  return t;
}

ConvNetVictim::ConvNetVictim(int image_size, int num_classes, uint64_t init_seed)
    : image_size_(image_size), num_classes_(num_classes) {
  if (image_size % 32 != 0)
    throw ImageError("ConvNetVictim: image size must be divisible by 32");
  Rng rng(init_seed);
  const int chans[5] = {16, 32, 64, 64, 64};
  int in_ch = 3;
  for (int i = 0; i < 5; ++i) {
    convs_.emplace_back(in_ch, chans[i], 3, 1, 1, rng);
    in_ch = chans[i];
  }
  const int final_side = image_size / 32;
  head_ = nn::Linear(64 * final_side * final_side, num_classes, rng);
}

std::vector<Var> ConvNetVictim::taps(const Var& x) const {
  std::vector<Var> out;
  Var h = x;
  for (const auto& conv : convs_) {
    h = nn::maxpool2(nn::relu(conv.forward(h)));
    out.push_back(h);
  }
  return out;
}

Var ConvNetVictim::logits(const Var& x) const {
  Var h = taps(x).back();
  return head_.forward(nn::flatten2(h));
}

std::vector<std::vector<float>> ConvNetVictim::forward_batch(
    const std::vector<const Image*>& xs) const {
  Var x(batch_tensor(xs));
  Var logp = nn::log_softmax_rows(logits(x));
  std::vector<std::vector<float>> out(xs.size());
  const int K = num_classes_;
  for (size_t n = 0; n < xs.size(); ++n) {
    out[n].resize(K);
    for (int k = 0; k < K; ++k)
      out[n][k] = std::exp(logp.value().data()[static_cast<int64_t>(n) * K + k]);
  }
  return out;
}

std::vector<std::vector<float>> ConvNetVictim::logp_gradient_batch(
    const std::vector<const Image*>& xs, const std::vector<int>& classes) const {
  if (xs.size() != classes.size())
    throw ImageError("logp_gradient_batch: batch/class count mismatch");
  Var x(batch_tensor(xs), /*requires_grad=*/true);
  Var logp = nn::log_softmax_rows(logits(x));
  // sum (not mean) so every sample's gradient has unit weight
  Var obj = nn::mul_scalar(nn::gather_rows_mean(logp, classes),
                           static_cast<float>(xs.size()));
  nn::backward(obj);
  std::vector<std::vector<float>> out(xs.size());
  const size_t per = static_cast<size_t>(3) * image_size_ * image_size_;
  const float* g = x.grad().data();
  for (size_t n = 0; n < xs.size(); ++n)
    out[n].assign(g + n * per, g + (n + 1) * per);
  return out;
}

nn::ParamMap ConvNetVictim::params() {
  nn::ParamMap m;
  for (size_t i = 0; i < convs_.size(); ++i)
    convs_[i].params(m, "conv" + std::to_string(i + 1));
  head_.params(m, "head");
  return m;
}

void ConvNetVictim::set_trainable(bool on) {
  auto m = params();
  m.set_requires_grad(on);
}

ConvNetVictim::TrainStats ConvNetVictim::train(
    const std::vector<Image>& images, const std::vector<int>& labels, int epochs, int batch_size,
    float lr, uint64_t seed, const std::function<void(const std::string&)>& log) {
  if (images.empty() || images.size() != labels.size())
    throw ImageError("ConvNetVictim::train: bad dataset");
  set_trainable(true);
  nn::Adam opt(params(), lr);
  Rng rng(seed);
  std::vector<size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  TrainStats stats;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(order.size(), off + static_cast<size_t>(batch_size));
      std::vector<const Image*> batch;
      std::vector<int> ys;
      for (size_t i = off; i < end; ++i) {
        batch.push_back(&images[order[i]]);
        ys.push_back(labels[order[i]]);
      }
      opt.zero_grad();
      Var x(batch_tensor(batch));
      Var lg = logits(x);
      Var logp = nn::log_softmax_rows(lg);
      Var loss = nn::mul_scalar(nn::gather_rows_mean(logp, ys), -1.0f);
      nn::backward(loss);
      opt.step();
      loss_sum += loss.value().item() * static_cast<double>(batch.size());
      const int K = num_classes_;
      for (size_t i = 0; i < batch.size(); ++i) {
        const float* row = lg.value().data() + static_cast<int64_t>(i) * K;
        int arg = static_cast<int>(std::max_element(row, row + K) - row);
        if (arg == ys[i]) ++correct;
      }
    }
    stats.epoch_loss.push_back(loss_sum / static_cast<double>(images.size()));
    stats.final_train_acc = static_cast<double>(correct) / static_cast<double>(images.size());
    if (log)
      log("victim epoch " + std::to_string(e + 1) + "/" + std::to_string(epochs) +
          " loss=" + std::to_string(stats.epoch_loss.back()) +
          " acc=" + std::to_string(stats.final_train_acc));
  }
  set_trainable(false);
  return stats;
}

void ConvNetVictim::save(const std::filesystem::path& path) const {
  nn::Checkpoint ck;
  ck.stage = 0;
  ck.groups["victim"] = const_cast<ConvNetVictim*>(this)->params();
  ck.scalars["image_size"] = image_size_;
  ck.scalars["num_classes"] = num_classes_;
  ck.save(path);
}

std::unique_ptr<ConvNetVictim> ConvNetVictim::load_file(const std::filesystem::path& path) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  auto v = std::make_unique<ConvNetVictim>(static_cast<int>(ck.scalars.at("image_size")),
                                           static_cast<int>(ck.scalars.at("num_classes")), 0);
  nn::ParamMap dst = v->params();
  nn::ParamMap& src = ck.groups.at("victim");
  if (src.items.size() != dst.items.size())
    throw std::runtime_error("victim checkpoint: parameter count mismatch");
  for (size_t i = 0; i < dst.items.size(); ++i) {
    if (src.items[i].first != dst.items[i].first)
      throw std::runtime_error("victim checkpoint: parameter name mismatch");
    dst.items[i].second.value() = src.items[i].second.value();
  }
  v->set_trainable(false);
  return v;
}

LinearSoftmaxVictim::LinearSoftmaxVictim(int h, int w, int num_classes, uint64_t seed)
    : height_(h), width_(w), num_classes_(num_classes) {
  Rng rng(seed);
  w_ = Var(nn::he_normal({num_classes, 3 * h * w}, 3 * h * w, rng), false);
  b_ = Var(Tensor({num_classes}), false);
}

LinearSoftmaxVictim::LinearSoftmaxVictim(int h, int w, Tensor weights, Tensor bias)
    : height_(h), width_(w), num_classes_(weights.dim(0)) {
  w_ = Var(std::move(weights), false);
  b_ = Var(std::move(bias), false);
}

std::vector<std::vector<float>> LinearSoftmaxVictim::forward_batch(
    const std::vector<const Image*>& xs) const {
  Var x(ConvNetVictim::batch_tensor(xs));
  Var logp = nn::log_softmax_rows(nn::linear(nn::flatten2(x), w_, b_));
  std::vector<std::vector<float>> out(xs.size());
  for (size_t n = 0; n < xs.size(); ++n) {
    out[n].resize(num_classes_);
    for (int k = 0; k < num_classes_; ++k)
      out[n][k] = std::exp(logp.value().data()[static_cast<int64_t>(n) * num_classes_ + k]);
  }
  return out;
}

std::vector<std::vector<float>> LinearSoftmaxVictim::logp_gradient_batch(
    const std::vector<const Image*>& xs, const std::vector<int>& classes) const {
  Var x(ConvNetVictim::batch_tensor(xs), true);
  Var logp = nn::log_softmax_rows(nn::linear(nn::flatten2(x), w_, b_));
  Var obj = nn::mul_scalar(nn::gather_rows_mean(logp, classes), static_cast<float>(xs.size()));
  nn::backward(obj);
  std::vector<std::vector<float>> out(xs.size());
  const size_t per = static_cast<size_t>(3) * height_ * width_;
  const float* g = x.grad().data();
  for (size_t n = 0; n < xs.size(); ++n) out[n].assign(g + n * per, g + (n + 1) * per);
  return out;
}

void LinearSoftmaxVictim::fit(const std::vector<Image>& images, const std::vector<int>& labels,
                              int epochs, float lr, uint64_t seed) {
  w_.set_requires_grad(true);
  b_.set_requires_grad(true);
  nn::ParamMap pm;
  pm.add("w", w_);
  pm.add("b", b_);
  nn::Adam opt(pm, lr);
  (void)seed;  // full-batch updates, nothing stochastic
  std::vector<const Image*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  for (int e = 0; e < epochs; ++e) {
    opt.zero_grad();
    Var x(ConvNetVictim::batch_tensor(ptrs));
    Var logp = nn::log_softmax_rows(nn::linear(nn::flatten2(x), w_, b_));
    Var loss = nn::mul_scalar(nn::gather_rows_mean(logp, labels), -1.0f);
    nn::backward(loss);
    opt.step();
  }
  w_.set_requires_grad(false);
  b_.set_requires_grad(false);
}

}  // namespace patchdef
