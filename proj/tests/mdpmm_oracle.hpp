#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "trajscope/mdpmm.hpp"

namespace trajscope::test_support {

// log N(v; m*1, s2*I + t2*11^T) through an explicit dense covariance and a
// Cholesky factorization.
inline double dense_log_marginal(const std::vector<double>& v, double m, double s2, double t2) {
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] = t2 + (i == j ? s2 : 0.0);
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = i == j ? std::sqrt(s) : s / l[j * n + j];
    }
  }
  std::vector<double> y(n);
  double logdet = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = v[i] - m;
    for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
    y[i] = s / l[i * n + i];
    logdet += 2.0 * std::log(l[i * n + i]);
  }
  double quad = 0.0;
  for (double e : y) quad += e * e;
  return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

struct Oracle {
  FeatureRows x;
  std::size_t k_max;
  double alpha;
  double s2;
  double t2 = 1.0;

  [[nodiscard]] double cluster_marginal(const std::vector<std::size_t>& members) const {
    double lp = 0.0;
    for (std::size_t d = 0; d < x.front().size(); ++d) {
      std::vector<double> v;
      for (auto i : members) v.push_back(x[i][d]);
      lp += dense_log_marginal(v, 0.0, s2, t2);
    }
    return lp;
  }

  [[nodiscard]] std::vector<std::size_t> members(const std::vector<std::size_t>& z, std::size_t k,
                                                 std::size_t skip) const {
    std::vector<std::size_t> m;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (j != skip && z[j] == k) m.push_back(j);
    return m;
  }

  // Brute-force conditional: ratio of joint marginals with and without i.
  [[nodiscard]] std::vector<double> conditional(const std::vector<std::size_t>& z, std::size_t i) const {
    std::vector<double> logw(k_max);
    for (std::size_t k = 0; k < k_max; ++k) {
      auto m = members(z, k, i);
      const double without = cluster_marginal(m);
      m.push_back(i);
      logw[k] = std::log(static_cast<double>(m.size() - 1) + alpha / static_cast<double>(k_max)) +
                cluster_marginal(m) - without;
    }
    double top = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    for (auto& w : logw) total += (w = std::exp(w - top));
    for (auto& w : logw) w /= total;
    return logw;
  }

  [[nodiscard]] double log_joint(const std::vector<std::size_t>& z) const {
    const double n = static_cast<double>(z.size());
    const double ak = alpha / static_cast<double>(k_max);
    double lj = std::lgamma(alpha) - std::lgamma(n + alpha);
    for (std::size_t k = 0; k < k_max; ++k) {
      const auto m = members(z, k, z.size());
      if (m.empty()) continue;
      lj += std::lgamma(static_cast<double>(m.size()) + ak) - std::lgamma(ak) + cluster_marginal(m);
    }
    return lj;
  }
};

}  // namespace trajscope::test_support
