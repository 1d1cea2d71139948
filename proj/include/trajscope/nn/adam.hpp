#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "trajscope/errors.hpp"
#include "trajscope/nn/tensor.hpp"

namespace trajscope::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameters.
template <class T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step() {
    for (auto* p : params_) {
      if (!p->grad.all_finite()) throw ValidationError("non-finite gradient for parameter '" + p->name + "'");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.learning_rate), eps = static_cast<T>(cfg_.epsilon);
    const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      T* w = params_[k]->value.data();
      const T* g = params_[k]->grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      const std::size_t n = params_[k]->value.size();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mh = m[i] * inv_c1;
        const T vh = v[i] * inv_c2;
        w[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }

  [[nodiscard]] std::uint64_t steps() const { return step_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }
  [[nodiscard]] std::vector<Tensor<T>>& first_moments() { return m_; }
  [[nodiscard]] std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_steps(std::uint64_t s) { step_ = s; }

 private:
  std::vector<Param<T>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::uint64_t step_ = 0;
};

}  // namespace trajscope::nn
