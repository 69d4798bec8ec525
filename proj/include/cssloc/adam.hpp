#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cssloc/tensor.hpp"

namespace cssloc {

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

// Adam with bias correction and decoupled weight decay:
//   p <- p - lr*wd*p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, std::span<const Tensor<T>* const> params) : cfg_(cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    for (const auto* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("adam: parameter count mismatch");
    ++step_;
    const T lr = static_cast<T>(cfg_.lr);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.eps);
    const T decay = static_cast<T>(cfg_.lr * cfg_.weight_decay);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      const auto& g = *grads[k];
      require_shape(g, p.shape(), "adam gradient");
      require_shape(m_[k], p.shape(), "adam moment");
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= decay * p[i];
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        const T mhat = m[i] / c1;
        const T vhat = v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace cssloc
