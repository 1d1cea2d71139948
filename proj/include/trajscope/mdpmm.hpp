#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"
#include "trajscope/rng.hpp"
#include "trajscope/trajectory.hpp"

namespace trajscope {

using FeatureRows = std::vector<std::vector<double>>;

struct MdpmmConfig {
  /// Concentration radius; the Dirichlet concentration is exp(-beta).
  double beta = 5.0;
  /// Truncation level. 0 selects min(N, 200).
  std::size_t k_max = 0;
  std::size_t sweeps = 100;
  /// Per-dimension prior on cluster means (standardized units). Empty means
  /// mean 0 / variance 1 in every dimension.
  std::vector<double> prior_mean;
  std::vector<double> prior_variance;
  double observation_variance = 0.05;
  std::uint64_t seed = 1;
};

struct ClusterStats {
  std::size_t count = 0;
  std::vector<double> mean;      // feature units
  std::vector<double> variance;  // feature units, population variance
};

struct ClusterResult {
  std::vector<std::size_t> assignments;
  std::vector<ClusterStats> clusters;  // k_max entries, empty ones included
  std::vector<double> weights;         // posterior mean mixing proportions
  double initial_log_joint = 0.0;
  std::vector<double> log_joint;       // after each sweep
  std::size_t k_max = 0;

  [[nodiscard]] std::size_t occupied() const {
    return static_cast<std::size_t>(
        std::count_if(clusters.begin(), clusters.end(), [](const ClusterStats& c) { return c.count > 0; }));
  }
};

/// Per-dimension z-score. Constant dimensions are centred but not scaled.
inline FeatureRows standardize(const FeatureRows& rows) {
  if (rows.empty()) return {};
  const std::size_t d = rows.front().size();
  const double n = static_cast<double>(rows.size());
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (auto& m : mean) m /= n;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
  for (auto& s : sd) s = std::sqrt(s / n);
  FeatureRows out(rows.size(), std::vector<double>(d));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[i][j] = (rows[i][j] - mean[j]) / (sd[j] > 0.0 ? sd[j] : 1.0);
  return out;
}

/**
 * Collapsed Gibbs sampler for a finite symmetric Dirichlet mixture of
 * isotropic Gaussians with known observation variance and a conjugate
 * Normal prior on each cluster mean.
 *
 * Cluster parameters are integrated out; the state is the assignment vector
 * plus per-cluster sufficient statistics (count and per-dimension sum).
 */
class CollapsedGibbsSampler {
 public:
  CollapsedGibbsSampler(FeatureRows data, std::size_t k_max, double beta, std::vector<double> prior_mean,
                        std::vector<double> prior_variance, double observation_variance)
      : data_(std::move(data)), k_max_(k_max), beta_(beta), obs_var_(observation_variance) {
    if (data_.empty()) throw ValidationError("mDPMM needs at least one feature vector");
    if (k_max_ < 1) throw ValidationError("K_max must be at least 1");
    if (!(obs_var_ > 0.0)) throw ValidationError("observation variance must be positive");
    if (!std::isfinite(beta_) || beta_ > 700.0) throw ValidationError("beta must be finite and at most 700");
    dims_ = data_.front().size();
    for (const auto& r : data_) {
      if (r.size() != dims_) throw ValidationError("feature rows have inconsistent dimension");
      for (double v : r)
        if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
    }
    prior_mean_ = prior_mean.empty() ? std::vector<double>(dims_, 0.0) : std::move(prior_mean);
    prior_var_ = prior_variance.empty() ? std::vector<double>(dims_, 1.0) : std::move(prior_variance);
    if (prior_mean_.size() != dims_ || prior_var_.size() != dims_) {
      throw ValidationError("prior mean/variance must have one entry per feature dimension");
    }
    for (double v : prior_var_)
      if (!(v > 0.0)) throw ValidationError("prior variance must be positive");
    log_alpha_over_k_ = -beta_ - std::log(static_cast<double>(k_max_));
    assignments_.assign(data_.size(), 0);
    counts_.assign(k_max_, 0);
    sums_.assign(k_max_, std::vector<double>(dims_, 0.0));
    for (std::size_t i = 0; i < data_.size(); ++i) add(i, 0);
  }

  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t k_max() const { return k_max_; }
  [[nodiscard]] const std::vector<std::size_t>& assignments() const { return assignments_; }
  [[nodiscard]] const std::vector<std::size_t>& counts() const { return counts_; }

  void set_assignments(const std::vector<std::size_t>& z) {
    if (z.size() != data_.size()) throw ValidationError("assignment vector has wrong length");
    std::fill(counts_.begin(), counts_.end(), 0);
    for (auto& s : sums_) std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (z[i] >= k_max_) throw ValidationError("assignment out of range");
      add(i, z[i]);
    }
  }

  void remove(std::size_t i) {
    const auto k = assignments_[i];
    --counts_[k];
    for (std::size_t d = 0; d < dims_; ++d) sums_[k][d] -= data_[i][d];
    // Re-zero exactly so empty clusters share one predictive.
    if (counts_[k] == 0) std::fill(sums_[k].begin(), sums_[k].end(), 0.0);
  }

  void add(std::size_t i, std::size_t k) {
    assignments_[i] = k;
    ++counts_[k];
    for (std::size_t d = 0; d < dims_; ++d) sums_[k][d] += data_[i][d];
  }

  /// log of (n_k + alpha/K): the collapsed Dirichlet prior factor.
  [[nodiscard]] double log_prior_weight(std::size_t n) const {
    if (n == 0) return log_alpha_over_k_;
    const double nd = static_cast<double>(n);
    return std::log(nd) + std::log1p(std::exp(log_alpha_over_k_) / nd);
  }

  /// Log posterior predictive density of row x under a cluster with the
  /// given count and per-dimension sums.
  [[nodiscard]] double log_predictive(const std::vector<double>& x, std::size_t n,
                                      const std::vector<double>& sum) const {
    double lp = 0.0;
    for (std::size_t d = 0; d < dims_; ++d) {
      const double post_var = 1.0 / (1.0 / prior_var_[d] + static_cast<double>(n) / obs_var_);
      const double post_mean = post_var * (prior_mean_[d] / prior_var_[d] + sum[d] / obs_var_);
      const double var = post_var + obs_var_;
      const double r = x[d] - post_mean;
      lp += -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
    }
    return lp;
  }

  /**
   * Normalized conditional p(z_i = k | z_-i, x) for every k. Point i must
   * currently be removed from the statistics.
   */
  [[nodiscard]] std::vector<double> conditional(std::size_t i) const {
    std::vector<double> logw(k_max_);
    const std::vector<double> zeros(dims_, 0.0);
    const double empty_lp = log_predictive(data_[i], 0, zeros);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_max_; ++k) {
      const double lp = counts_[k] == 0 ? empty_lp : log_predictive(data_[i], counts_[k], sums_[k]);
      logw[k] = log_prior_weight(counts_[k]) + lp;
      top = std::max(top, logw[k]);
    }
    double total = 0.0;
    for (auto& w : logw) {
      w = std::exp(w - top);
      total += w;
    }
    for (auto& w : logw) w /= total;
    return logw;
  }

  /// One full pass over all points, each resampled from its conditional by
  /// inverse CDF with a uniform keyed by (sweep, i).
  void sweep(const CounterRng& stream, std::size_t sweep_index) {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      remove(i);
      const auto probs = conditional(i);
      auto rng = stream.split(sweep_index, i);
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t pick = k_max_ - 1;
      for (std::size_t k = 0; k < k_max_; ++k) {
        acc += probs[k];
        if (u < acc) {
          pick = k;
          break;
        }
      }
      // Guard against the cumulative sum stopping short of 1 by rounding.
      while (probs[pick] == 0.0 && pick > 0) --pick;
      add(i, pick);
    }
  }

  /**
   * log p(z, x) with the mixing weights and cluster means integrated out:
   * the Dirichlet-multinomial term plus each cluster's Gaussian marginal.
   */
  [[nodiscard]] double log_joint() const {
    const double n = static_cast<double>(data_.size());
    const double alpha_k = std::exp(log_alpha_over_k_);
    const double alpha = std::exp(-beta_);
    double lj = std::lgamma(alpha) - std::lgamma(n + alpha);
    for (std::size_t k = 0; k < k_max_; ++k) {
      if (counts_[k] == 0) continue;
      lj += std::lgamma(static_cast<double>(counts_[k]) + alpha_k) - std::lgamma(alpha_k);
    }
    // Gaussian marginal per cluster and dimension via centred sufficient statistics.
    std::vector<std::vector<double>> sq(k_max_, std::vector<double>(dims_, 0.0));
    std::vector<std::vector<double>> lin(k_max_, std::vector<double>(dims_, 0.0));
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const auto k = assignments_[i];
      for (std::size_t d = 0; d < dims_; ++d) {
        const double c = data_[i][d] - prior_mean_[d];
        sq[k][d] += c * c;
        lin[k][d] += c;
      }
    }
    for (std::size_t k = 0; k < k_max_; ++k) {
      if (counts_[k] == 0) continue;
      const double nk = static_cast<double>(counts_[k]);
      for (std::size_t d = 0; d < dims_; ++d) {
        const double s2 = obs_var_;
        const double t2 = prior_var_[d];
        lj += -0.5 * nk * std::log(2.0 * std::numbers::pi * s2) + 0.5 * std::log(s2 / (s2 + nk * t2)) -
              sq[k][d] / (2.0 * s2) + t2 * lin[k][d] * lin[k][d] / (2.0 * s2 * (s2 + nk * t2));
      }
    }
    return lj;
  }

 private:
  FeatureRows data_;
  std::size_t k_max_;
  double beta_;
  double obs_var_;
  std::size_t dims_ = 0;
  std::vector<double> prior_mean_;
  std::vector<double> prior_var_;
  double log_alpha_over_k_ = 0.0;
  std::vector<std::size_t> assignments_;
  std::vector<std::size_t> counts_;
  std::vector<std::vector<double>> sums_;
};

/**
 * Clusters feature rows with the collapsed sampler. Rows are standardized
 * internally; reported cluster means and variances are in the original
 * units. Deterministic for a given seed.
 */
inline ClusterResult fit_rows(const FeatureRows& rows, const MdpmmConfig& cfg) {
  if (rows.empty()) throw ValidationError("mDPMM needs at least one feature vector");
  if (cfg.sweeps < 1) throw ValidationError("sweeps must be at least 1");
  for (const auto& r : rows)
    for (double v : r)
      if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
  const std::size_t k_max = cfg.k_max == 0 ? std::min<std::size_t>(rows.size(), 200) : cfg.k_max;
  const auto z = standardize(rows);
  CollapsedGibbsSampler sampler(z, k_max, cfg.beta, cfg.prior_mean, cfg.prior_variance, cfg.observation_variance);

  ClusterResult res;
  res.k_max = k_max;
  res.initial_log_joint = sampler.log_joint();
  const auto stream = CounterRng(cfg.seed).split("mdpmm/gibbs");
  for (std::size_t s = 0; s < cfg.sweeps; ++s) {
    sampler.sweep(stream, s);
    res.log_joint.push_back(sampler.log_joint());
  }
  res.assignments = sampler.assignments();

  const std::size_t dims = rows.front().size();
  res.clusters.assign(k_max, ClusterStats{0, std::vector<double>(dims, 0.0), std::vector<double>(dims, 0.0)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& c = res.clusters[res.assignments[i]];
    ++c.count;
    for (std::size_t d = 0; d < dims; ++d) c.mean[d] += rows[i][d];
  }
  for (auto& c : res.clusters)
    if (c.count > 0)
      for (auto& m : c.mean) m /= static_cast<double>(c.count);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& c = res.clusters[res.assignments[i]];
    for (std::size_t d = 0; d < dims; ++d) c.variance[d] += (rows[i][d] - c.mean[d]) * (rows[i][d] - c.mean[d]);
  }
  for (auto& c : res.clusters)
    if (c.count > 0)
      for (auto& v : c.variance) v /= static_cast<double>(c.count);

  const double alpha = std::exp(-cfg.beta);
  const double alpha_k = alpha / static_cast<double>(k_max);
  const double denom = static_cast<double>(rows.size()) + alpha;
  res.weights.resize(k_max);
  for (std::size_t k = 0; k < k_max; ++k) res.weights[k] = (static_cast<double>(res.clusters[k].count) + alpha_k) / denom;
  return res;
}

inline ClusterResult fit(std::span<const FeatureVector> features, const MdpmmConfig& cfg) {
  FeatureRows rows;
  rows.reserve(features.size());
  for (const auto& f : features) {
    const auto a = f.as_array();
    rows.emplace_back(a.begin(), a.end());
  }
  return fit_rows(rows, cfg);
}

struct ClusterPartition {
  std::vector<std::size_t> prominent;
  std::vector<std::size_t> rare;
};

/// Non-empty clusters with at least min_size members are prominent; the
/// remaining non-empty clusters are rare.
inline ClusterPartition partition_clusters(const ClusterResult& result, std::size_t min_size) {
  if (min_size < 1) throw ValidationError("min_size must be at least 1");
  ClusterPartition p;
  for (std::size_t k = 0; k < result.clusters.size(); ++k) {
    const auto n = result.clusters[k].count;
    if (n == 0) continue;
    (n >= min_size ? p.prominent : p.rare).push_back(k);
  }
  return p;
}

/// Export: {assignments: {id: k}, clusters: [{k, count, mean, weight}], log_joint: [...]}.
inline nlohmann::json cluster_result_to_json(const ClusterResult& r, std::span<const std::string> ids) {
  if (ids.size() != r.assignments.size()) throw ValidationError("id list does not match assignments");
  nlohmann::json j;
  j["assignments"] = nlohmann::json::object();
  for (std::size_t i = 0; i < ids.size(); ++i) j["assignments"][ids[i]] = r.assignments[i];
  j["clusters"] = nlohmann::json::array();
  for (std::size_t k = 0; k < r.clusters.size(); ++k) {
    if (r.clusters[k].count == 0) continue;
    j["clusters"].push_back(
        {{"k", k}, {"count", r.clusters[k].count}, {"mean", r.clusters[k].mean}, {"weight", r.weights[k]}});
  }
  j["log_joint"] = r.log_joint;
  j["k_max"] = r.k_max;
  return j;
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw ValidationError("label vectors differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  const std::size_t ka = *std::max_element(a.begin(), a.end()) + 1;
  const std::size_t kb = *std::max_element(b.begin(), b.end()) + 1;
  std::vector<double> table(ka * kb, 0.0), ra(ka, 0.0), cb(kb, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    table[a[i] * kb + b[i]] += 1.0;
    ra[a[i]] += 1.0;
    cb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (double v : table) sum_ij += c2(v);
  for (double v : ra) sum_a += c2(v);
  for (double v : cb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

}  // namespace trajscope
