#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "trajscope/nn/tensor.hpp"

namespace trajscope::nn {

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Row-wise softmax with max subtraction, computed in double.
template <class T>
std::vector<double> softmax_row(const T* logits, std::size_t c) {
  std::vector<double> p(c);
  double top = static_cast<double>(*std::max_element(logits, logits + c));
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) total += (p[k] = std::exp(static_cast<double>(logits[k]) - top));
  for (auto& v : p) v /= total;
  return p;
}

/// Mean over the batch of -log softmax(logits)[target]; grad = (softmax - onehot) / N.
template <class T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) throw ValidationError("logits must be [N,C], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) throw ValidationError("expected " + std::to_string(n) + " targets");
  LossAndGrad<T> out{0.0, Tensor<T>(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) {
      throw ValidationError("target " + std::to_string(targets[i]) + " outside [0," + std::to_string(c) + ")");
    }
    const T* row = logits.data() + i * c;
    const double top = static_cast<double>(*std::max_element(row, row + c));
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) total += std::exp(static_cast<double>(row[k]) - top);
    const double log_z = top + std::log(total);
    out.loss += log_z - static_cast<double>(row[targets[i]]);
    for (std::size_t k = 0; k < c; ++k) {
      const double p = std::exp(static_cast<double>(row[k]) - log_z);
      out.grad[i * c + k] = static_cast<T>((p - (k == targets[i] ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  out.loss /= static_cast<double>(n);
  return out;
}

/// Mean over the batch of 0.5 * ||y - target||^2.
template <class T>
LossAndGrad<T> mean_squared_error(const Tensor<T>& y, const Tensor<T>& target) {
  if (y.shape() != target.shape()) throw ValidationError("prediction and target shapes differ");
  const double n = static_cast<double>(y.dim(0));
  LossAndGrad<T> out{0.0, Tensor<T>(y.shape())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y[i]) - static_cast<double>(target[i]);
    out.loss += 0.5 * d * d;
    out.grad[i] = static_cast<T>(d / n);
  }
  out.loss /= n;
  return out;
}

}  // namespace trajscope::nn
