#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchdef/layers.hpp"

namespace patchdef::nn {

/// Adam over a fixed parameter list. Parameters whose requires_grad flag is
/// off (frozen groups) are skipped entirely: no state update, no value change.
class Adam {
 public:
  Adam() = default;
  explicit Adam(ParamMap params, float lr = 2e-4f, float beta1 = 0.9f, float beta2 = 0.999f,
                float eps = 1e-8f);

  void step();
  void zero_grad();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  int64_t t() const { return t_; }

  ParamMap& params() { return params_; }

  struct State {
    int64_t t = 0;
    std::vector<std::pair<std::string, std::pair<Tensor, Tensor>>> moments;  // name -> (m, v)
  };
  State snapshot() const;
  void restore(const State& s);

 private:
  ParamMap params_;
  std::vector<Tensor> m_, v_;
  float lr_ = 2e-4f, beta1_ = 0.9f, beta2_ = 0.999f, eps_ = 1e-8f;
  int64_t t_ = 0;
};

}  // namespace patchdef::nn
