#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "trajscope/nn/loss.hpp"
#include "trajscope/nn/network.hpp"
#include "trajscope/rng.hpp"

namespace trajscope::nn {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates_checked = 0;
  double tolerance = 0.0;

  [[nodiscard]] bool passed() const { return max_relative_error < tolerance; }
};

/**
 * Compares analytic gradients against central differences.
 *
 * `loss` evaluates the scalar objective at the current parameter values;
 * `analytic` must leave d(loss)/d(param) in every Param::grad. Up to
 * `per_param` coordinates are sampled from each parameter tensor (all of
 * them when the tensor is smaller). Relative error is
 * |a - n| / max(|a|, |n|, floor).
 */
inline GradCheckReport grad_check(const std::vector<Param<double>*>& params, const std::function<double()>& loss,
                                  const std::function<void()>& analytic, double eps, double tolerance,
                                  CounterRng rng, std::size_t per_param = 50, double floor = 1e-6) {
  GradCheckReport report;
  report.tolerance = tolerance;
  analytic();
  for (auto* p : params) {
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    idx.resize(std::min(idx.size(), per_param));
    for (auto i : idx) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = loss();
      p->value[i] = saved - eps;
      const double down = loss();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = p->grad[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.coordinates_checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = p->name;
        report.worst_index = i;
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  return report;
}

/// Gradient check of a network under softmax cross-entropy.
inline GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input,
                                  const std::vector<std::size_t>& targets, double eps, double tolerance,
                                  CounterRng rng, std::size_t per_param = 50) {
  auto loss = [&] { return softmax_cross_entropy(net.forward(input), targets).loss; };
  auto analytic = [&] {
    net.zero_grad();
    const auto out = softmax_cross_entropy(net.forward(input), targets);
    net.backward(out.grad);
  };
  return grad_check(net.params(), loss, analytic, eps, tolerance, rng, per_param);
}

}  // namespace trajscope::nn
