#pragma once

#include <cmath>
#include <vector>

#include "glann/nn.hpp"

namespace glann {

class Sgd {
 public:
  void step(const std::vector<nn::ParamRef>& params, float lr) {
    for (const auto& p : params) {
      if (!p.grad) continue;
      float* v = p.value->data();
      const float* g = p.grad->data();
      for (int64_t i = 0; i < p.value->numel(); ++i) v[i] -= lr * g[i];
    }
  }
};

// Adam with bias correction. State is positional: the same parameter list
// must be passed on every step.
class Adam {
 public:
  explicit Adam(float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<nn::ParamRef>& params, float lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value->shape());
        v_.emplace_back(p.value->shape());
      }
    }
    ++t_;
    float c1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    float c2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
      const auto& p = params[k];
      if (!p.grad) continue;
      float* val = p.value->data();
      const float* g = p.grad->data();
      float* m = m_[k].data();
      float* v = v_[k].data();
      for (int64_t i = 0; i < p.value->numel(); ++i) {
        m[i] = beta1_ * m[i] + (1.0f - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0f - beta2_) * g[i] * g[i];
        float mhat = m[i] / c1;
        float vhat = v[i] / c2;
        val[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

 private:
  float beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace glann
