#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "patchdef/autodiff.hpp"
#include "patchdef/rng.hpp"

namespace patchdef::nn {

/// Named parameter list. Order is the serialization order, so modules must
/// register parameters deterministically.
struct ParamMap {
  std::vector<std::pair<std::string, Var>> items;

  void add(const std::string& name, const Var& v) { items.emplace_back(name, v); }

  Var* find(const std::string& name) {
    for (auto& [n, v] : items)
      if (n == name) return &v;
    return nullptr;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& [name, v] : items) n += v.value().numel();
    return n;
  }

  void set_requires_grad(bool rg) {
    for (auto& [name, v] : items) v.set_requires_grad(rg);
  }

  void zero_grad() {
    for (auto& [name, v] : items) v.zero_grad();
  }

  /// FNV-1a over the raw parameter bytes; used by the stage-freeze tests.
  uint64_t hash() const;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng, bool bias = true);

  Var forward(const Var& x) const { return conv2d(x, w_, b_, stride_, pad_); }
  void params(ParamMap& m, const std::string& prefix) {
    m.add(prefix + ".w", w_);
    if (b_.defined()) m.add(prefix + ".b", b_);
  }

 private:
  Var w_, b_;
  int stride_ = 1, pad_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim, Rng& rng);

  Var forward(const Var& x) const { return linear(x, w_, b_); }
  void params(ParamMap& m, const std::string& prefix) {
    m.add(prefix + ".w", w_);
    m.add(prefix + ".b", b_);
  }

 private:
  Var w_, b_;
};

/// Two 3x3 convolutions with ELU and a skip connection; no normalization
/// layers. The skip becomes a 1x1 projection when channels/stride change.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int in_ch, int out_ch, int stride, Rng& rng);

  Var forward(const Var& x) const;
  void params(ParamMap& m, const std::string& prefix);

 private:
  Conv2d conv1_, conv2_, proj_;
  bool has_proj_ = false;
};

/// Channel + spatial attention (CBAM). Channel MLP reduction defaults to 16,
/// spatial kernel to 7x7. Output passes through a final ReLU.
class CbamBlock {
 public:
  CbamBlock() = default;
  CbamBlock(int channels, Rng& rng, int reduction = 16, int spatial_kernel = 7);

  Var forward(const Var& x) const;
  void params(ParamMap& m, const std::string& prefix);

  /// Attention maps for inspection: (channel_scale, spatial_scale).
  std::pair<Var, Var> attention(const Var& x) const;

 private:
  Linear fc1_, fc2_;
  Conv2d spatial_;
};

/// Per-channel mask-weighted mean/std statistics. Weights may be soft.
/// Accumulates in double; count is the weight total per sample.
struct MaskedStats {
  Var mean;  // (N,C,1,1)
  Var std;   // (N,C,1,1), population convention, epsilon-floored downstream
};

MaskedStats masked_stats(const Var& x, const Var& weight);

/// Context renormalization: shift the masked ("hole") region of every channel
/// to the mean/std of a surrounding ("ring") region; pass-through elsewhere.
/// Falls back to whole-image statistics when the ring is empty, reporting the
/// degeneracy through *ring_was_empty when given.
Var context_normalize(const Var& x, const Var& hole, const Var& ring, float epsilon,
                      bool* ring_was_empty = nullptr);

/// 3x3 convolution followed by context renormalization and ELU.
class ContextNormBlock {
 public:
  ContextNormBlock() = default;
  ContextNormBlock(int in_ch, int out_ch, Rng& rng, float epsilon = 1e-5f);

  Var forward(const Var& x, const Var& hole, const Var& ring, bool* ring_was_empty = nullptr) const;
  void params(ParamMap& m, const std::string& prefix) { conv_.params(m, prefix + ".conv"); }

 private:
  Conv2d conv_;
  float epsilon_ = 1e-5f;
};

// ---- weight init helpers ----------------------------------------------------

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng);

}  // namespace patchdef::nn
