#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "patchdef/image.hpp"
#include "patchdef/layers.hpp"
#include "patchdef/rng.hpp"

namespace patchdef {

/// Classifier under attack: class probabilities plus the per-pixel gradient of
/// log Pr(class | x), the two capabilities the attacks need.
class VictimClassifier {
 public:
  virtual ~VictimClassifier() = default;
  virtual int num_classes() const = 0;
  virtual std::vector<std::vector<float>> forward_batch(
      const std::vector<const Image*>& xs) const = 0;
  /// d log Pr(classes[i] | xs[i]) / d pixels, CHW layout per image.
  virtual std::vector<std::vector<float>> logp_gradient_batch(
      const std::vector<const Image*>& xs, const std::vector<int>& classes) const = 0;
  virtual bool has_gradient() const { return true; }

  std::vector<float> forward(const Image& x) const;
  std::vector<float> logp_gradient(const Image& x, int cls) const;
  int predict(const Image& x) const;
};

/// Feature taps of a fixed pretrained convolutional classifier. Parameters are
/// frozen; gradients still flow through to the input.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int num_taps() const = 0;
  virtual std::vector<nn::Var> taps(const nn::Var& image_batch) const = 0;
};

/// Small convolutional classifier: five conv+pool stages (16,32,64,64,64
/// channels) and a linear head. Doubles as the frozen feature extractor, with
/// one tap after each pooling stage.
class ConvNetVictim : public VictimClassifier, public FeatureExtractor {
 public:
  ConvNetVictim(int image_size, int num_classes, uint64_t init_seed);

  int num_classes() const override { return num_classes_; }
  int image_size() const { return image_size_; }

  nn::Var logits(const nn::Var& x) const;
  std::vector<std::vector<float>> forward_batch(
      const std::vector<const Image*>& xs) const override;
  std::vector<std::vector<float>> logp_gradient_batch(
      const std::vector<const Image*>& xs, const std::vector<int>& classes) const override;

  int num_taps() const override { return 5; }
  std::vector<nn::Var> taps(const nn::Var& image_batch) const override;

  nn::ParamMap params();
  void set_trainable(bool on);

  struct TrainStats {
    std::vector<double> epoch_loss;
    double final_train_acc = 0.0;
  };
  TrainStats train(const std::vector<Image>& images, const std::vector<int>& labels, int epochs,
                   int batch_size, float lr, uint64_t seed,
                   const std::function<void(const std::string&)>& log = {});

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<ConvNetVictim> load_file(const std::filesystem::path& path);

  static nn::Tensor batch_tensor(const std::vector<const Image*>& xs);

 private:
  int image_size_ = 0, num_classes_ = 0;
  std::vector<nn::Conv2d> convs_;
  nn::Linear head_;
};

/// Linear-softmax model on raw pixels; a transparent victim for tests.
class LinearSoftmaxVictim : public VictimClassifier {
 public:
  LinearSoftmaxVictim(int h, int w, int num_classes, uint64_t seed);
  LinearSoftmaxVictim(int h, int w, nn::Tensor weights, nn::Tensor bias);

  int num_classes() const override { return num_classes_; }
  std::vector<std::vector<float>> forward_batch(
      const std::vector<const Image*>& xs) const override;
  std::vector<std::vector<float>> logp_gradient_batch(
      const std::vector<const Image*>& xs, const std::vector<int>& classes) const override;

  void fit(const std::vector<Image>& images, const std::vector<int>& labels, int epochs, float lr,
           uint64_t seed);

 private:
  int height_, width_, num_classes_;
  nn::Var w_, b_;
};

/// Identity extractor (single tap = the image itself); a losses-module test rig.
class IdentityExtractor : public FeatureExtractor {
 public:
  int num_taps() const override { return 1; }
  std::vector<nn::Var> taps(const nn::Var& x) const override { return {x}; }
};

}  // namespace patchdef
