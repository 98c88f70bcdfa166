#include "patchdef/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace patchdef::nn {

Adam::Adam(ParamMap params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, var] : params_.items) {
    m_.emplace_back(var.value().shape());
    v_.emplace_back(var.value().shape());
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (size_t i = 0; i < params_.items.size(); ++i) {
    Var& p = params_.items[i].second;
    if (!p.requires_grad() || !p.node()->grad.defined()) continue;
    float* w = p.value().data();
    const float* g = p.node()->grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const int64_t n = p.value().numel();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * g[j] * g[j];
      const float mh = m[j] / bc1;
      const float vh = v[j] / bc2;
      w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void Adam::zero_grad() { params_.zero_grad(); }

Adam::State Adam::snapshot() const {
  State s;
  s.t = t_;
  for (size_t i = 0; i < params_.items.size(); ++i)
    s.moments.emplace_back(params_.items[i].first, std::make_pair(m_[i], v_[i]));
  return s;
}

void Adam::restore(const State& s) {
  t_ = s.t;
  if (s.moments.size() != params_.items.size())
    throw std::runtime_error("Adam::restore: state size mismatch");
  for (size_t i = 0; i < s.moments.size(); ++i) {
    if (s.moments[i].first != params_.items[i].first)
      throw std::runtime_error("Adam::restore: parameter name mismatch at " + s.moments[i].first);
    m_[i] = s.moments[i].second.first;
    v_[i] = s.moments[i].second.second;
  }
}

}  // namespace patchdef::nn
