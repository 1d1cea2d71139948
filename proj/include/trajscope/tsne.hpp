#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"
#include "trajscope/rng.hpp"

namespace trajscope {

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  std::size_t momentum_switch = 250;
  double exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(perplexity >= 2.0)) throw ValidationError("t-SNE perplexity must be at least 2");
    if (iterations < 1) throw ValidationError("t-SNE needs at least one iteration");
    if (!(learning_rate > 0.0)) throw ValidationError("t-SNE learning rate must be positive");
    if (!(exaggeration >= 1.0)) throw ValidationError("early exaggeration must be at least 1");
  }
};

/// Row-stochastic conditional affinities p(j|i) plus calibration details.
struct Affinities {
  std::size_t n = 0;
  std::vector<double> conditional;  // n*n, row-major, zero diagonal
  std::vector<double> beta;         // 1 / (2 sigma_i^2)
  std::vector<double> perplexity;   // achieved, exp(entropy) in nats
  double target = 0.0;
  std::size_t unconverged = 0;
};

inline std::vector<double> squared_distances(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) {
        const double t = rows[i][k] - rows[j][k];
        s += t * t;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  return d;
}

/**
 * Per-row bandwidth search: bisection on beta until the row entropy is
 * within tol of log(perplexity), at most max_steps steps. Distances are
 * shifted by the row minimum before exponentiating.
 */
inline Affinities conditional_affinities(const std::vector<double>& sqdist, std::size_t n, double perplexity,
                                         double tol = 1e-5, std::size_t max_steps = 50) {
  if (sqdist.size() != n * n) throw ValidationError("distance matrix is not n x n");
  Affinities a;
  a.n = n;
  a.target = perplexity;
  a.conditional.assign(n * n, 0.0);
  a.beta.assign(n, 1.0);
  a.perplexity.assign(n, 0.0);
  const double target = std::log(perplexity);
  std::vector<double> shifted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = sqdist.data() + i * n;
    double dmin = std::numeric_limits<double>::infinity(), dsum = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, row[j]);
    for (std::size_t j = 0; j < n; ++j) {
      shifted[j] = j == i ? 0.0 : row[j] - dmin;
      dsum += shifted[j];
    }
    double* p = a.conditional.data() + i * n;
    // Scale-aware start: unit beta times the mean shifted distance.
    double beta = dsum > 0.0 ? static_cast<double>(n - 1) / dsum : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double entropy = 0.0;
    bool ok = false;
    for (std::size_t step = 0; step < max_steps; ++step) {
      double z = 0.0, wsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        p[j] = j == i ? 0.0 : std::exp(-beta * shifted[j]);
        z += p[j];
        wsum += p[j] * shifted[j];
      }
      entropy = std::log(z) + beta * wsum / z;
      for (std::size_t j = 0; j < n; ++j) p[j] /= z;
      const double diff = entropy - target;
      if (std::abs(diff) < tol) {
        ok = true;
        break;
      }
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    if (!ok) ++a.unconverged;
    a.beta[i] = beta;
    a.perplexity[i] = std::exp(entropy);
  }
  return a;
}

/// P = (P_cond + P_cond^T) / 2n; sums to 1.
inline std::vector<double> symmetrize(const std::vector<double>& cond, std::size_t n) {
  std::vector<double> p(n * n, 0.0);
  const double s = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / s;
  return p;
}

/// KL(P || Q) for a 2-D layout y (n*2, interleaved) under the Student-t kernel.
inline double tsne_kl(const std::vector<double>& p, const std::vector<double>& y, std::size_t n) {
  std::vector<double> w(n * n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      w[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      z += w[i * n + j];
    }
  double kl = 0.0;
  for (std::size_t k = 0; k < n * n; ++k)
    if (p[k] > 0.0) kl += p[k] * std::log(p[k] * z / w[k]);
  return kl;
}

/// Gradient of the objective with P scaled by `exaggeration`; returns the unscaled KL.
inline double tsne_gradient(const std::vector<double>& p, const std::vector<double>& y, std::size_t n,
                            double exaggeration, std::vector<double>& grad, std::vector<double>& w) {
  w.assign(n * n, 0.0);
  grad.assign(2 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      w[i * n + j] = w[j * n + i] = 1.0 / (1.0 + dx * dx + dy * dy);
    }
  double z = 0.0;
  for (std::size_t k = 0; k < n * n; ++k) z += w[k];
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double gx = 0.0, gy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double pij = p[i * n + j], wij = w[i * n + j];
      const double m = (exaggeration * pij - wij / z) * wij;
      gx += m * (y[2 * i] - y[2 * j]);
      gy += m * (y[2 * i + 1] - y[2 * j + 1]);
      if (pij > 0.0) kl += pij * std::log(pij * z / wij);
    }
    grad[2 * i] = 4.0 * gx;
    grad[2 * i + 1] = 4.0 * gy;
  }
  return kl;
}

struct TsneResult {
  std::vector<double> y;  // n*2 in input order
  double initial_kl = 0.0;
  /// KL right after early exaggeration ends; NaN if the run is shorter.
  double kl_after_exaggeration = std::nan("");
  double final_kl = 0.0;
  std::vector<std::pair<std::size_t, double>> kl_trace;
  double perplexity = 0.0;               // target actually used
  std::vector<double> achieved_perplexity;  // input order
};

/**
 * Exact t-SNE. Rows are processed in lexicographic order internally, so a
 * permuted input gives the same layout permuted.
 */
inline TsneResult tsne(const std::vector<std::vector<double>>& rows, const TsneConfig& cfg) {
  cfg.validate();
  const std::size_t n = rows.size();
  if (n < 4) throw ValidationError("t-SNE needs at least 4 points, got " + std::to_string(n));
  const std::size_t dim = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != dim) throw ValidationError("t-SNE input rows have different lengths");
    for (double v : r)
      if (!std::isfinite(v)) throw ValidationError("t-SNE input contains a non-finite value");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(rows[a].begin(), rows[a].end(), rows[b].begin(), rows[b].end());
  });
  std::vector<std::vector<double>> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = rows[order[i]];
  const CounterRng root(cfg.seed);
  std::size_t duplicates = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (rows[order[i]] != rows[order[i - 1]]) continue;
    auto rng = root.split("tsne/jitter").split(i);
    for (auto& v : x[i]) v += 1e-10 * rng.normal();
    ++duplicates;
  }
  if (duplicates > 0) warn("t-SNE: jittered " + std::to_string(duplicates) + " duplicate point(s) by 1e-10");

  TsneResult out;
  out.perplexity = std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0);
  if (out.perplexity < cfg.perplexity) {
    warn("t-SNE: perplexity " + std::to_string(cfg.perplexity) + " capped at " + std::to_string(out.perplexity) +
         " for " + std::to_string(n) + " points");
  }
  const auto aff = conditional_affinities(squared_distances(x), n, out.perplexity);
  if (aff.unconverged > 0) {
    warn("t-SNE: bandwidth search did not reach tolerance for " + std::to_string(aff.unconverged) + " point(s)");
  }
  const auto p = symmetrize(aff.conditional, n);

  std::vector<double> y(2 * n), update(2 * n, 0.0), gains(2 * n, 1.0), grad, w;
  auto init = root.split("tsne/init");
  for (auto& v : y) v = 1e-4 * init.normal();
  out.initial_kl = tsne_kl(p, y, n);
  out.kl_trace.emplace_back(0, out.initial_kl);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double alpha = it < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
    const double momentum = it < cfg.momentum_switch ? cfg.momentum_initial : cfg.momentum_final;
    tsne_gradient(p, y, n, alpha, grad, w);
    for (std::size_t k = 0; k < 2 * n; ++k) {
      gains[k] = (grad[k] > 0.0) != (update[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
      gains[k] = std::max(gains[k], 0.01);
      update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
    const std::size_t done = it + 1;
    if (done == cfg.exaggeration_iterations || done % 50 == 0 || done == cfg.iterations) {
      const double kl = tsne_kl(p, y, n);
      out.kl_trace.emplace_back(done, kl);
      if (done == cfg.exaggeration_iterations && done < cfg.iterations) out.kl_after_exaggeration = kl;
    }
  }
  for (double v : y)
    if (!std::isfinite(v)) throw ValidationError("t-SNE diverged to a non-finite layout");
  out.final_kl = out.kl_trace.back().second;

  out.y.assign(2 * n, 0.0);
  out.achieved_perplexity.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out.y[2 * order[i]] = y[2 * i];
    out.y[2 * order[i] + 1] = y[2 * i + 1];
    out.achieved_perplexity[order[i]] = aff.perplexity[i];
  }
  return out;
}

/**
 * Fraction-style neighbourhood preservation in [0, 1]: penalizes low-dim
 * k-neighbours by how far outside the high-dim k-neighbourhood they rank.
 * Ties in distance break by index.
 */
inline double trustworthiness(const std::vector<std::vector<double>>& high, const std::vector<std::vector<double>>& low,
                              std::size_t k) {
  const std::size_t n = high.size();
  if (low.size() != n) throw ValidationError("trustworthiness: point counts differ");
  if (k < 1 || 2 * k >= n) throw ValidationError("trustworthiness: k must satisfy 1 <= k < n/2");
  const auto dh = squared_distances(high), dl = squared_distances(low);
  std::vector<std::size_t> rank(n), idx(n);
  double penalty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto by = [&](const std::vector<double>& d) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (a == i || b == i) return a == i && b != i;
        const double da = d[i * n + a], db = d[i * n + b];
        return da < db || (da == db && a < b);
      });
    };
    by(dh);
    for (std::size_t r = 1; r < n; ++r) rank[idx[r]] = r;
    by(dl);
    for (std::size_t r = 1; r <= k; ++r)
      if (rank[idx[r]] > k) penalty += static_cast<double>(rank[idx[r]] - k);
  }
  const double nn = static_cast<double>(n), kk = static_cast<double>(k);
  return 1.0 - 2.0 / (nn * kk * (2.0 * nn - 3.0 * kk - 1.0)) * penalty;
}

struct EmbeddingPoint {
  std::string id;
  double z1 = 0.0;
  double z2 = 0.0;
  std::string cls;
  bool suggested = false;
};

struct Embedding2D {
  std::vector<EmbeddingPoint> points;
  double final_kl = 0.0;
};

/// Embeds latent vectors; ids and classes are carried through unchanged.
inline Embedding2D embed(const std::vector<std::string>& ids, const std::vector<std::vector<double>>& latents,
                         const std::vector<std::string>& classes, const TsneConfig& cfg, TsneResult* details = nullptr) {
  if (ids.size() != latents.size() || classes.size() != latents.size()) {
    throw ValidationError("embed: ids, latents and classes must have the same length");
  }
  auto r = tsne(latents, cfg);
  Embedding2D e;
  e.final_kl = r.final_kl;
  for (std::size_t i = 0; i < ids.size(); ++i) e.points.push_back({ids[i], r.y[2 * i], r.y[2 * i + 1], classes[i], false});
  if (details) *details = std::move(r);
  return e;
}

struct OutlierReport {
  std::vector<std::string> flagged;
  /// Classes with fewer than 3 points; their members are never flagged.
  std::vector<std::string> skipped_classes;
};

/**
 * Marks points whose distance to their class centroid exceeds k_sigma times
 * the class's mean distance. Only sets `suggested`; nothing is removed.
 */
inline OutlierReport suggest_outliers(Embedding2D& e, double k_sigma = 3.0) {
  if (!(k_sigma > 0.0)) throw ValidationError("k_sigma must be positive");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < e.points.size(); ++i) {
    if (e.points[i].cls.empty()) throw ValidationError("point '" + e.points[i].id + "' has no class label");
    members[e.points[i].cls].push_back(i);
  }
  OutlierReport rep;
  for (auto& pt : e.points) pt.suggested = false;
  for (const auto& [cls, idx] : members) {
    if (idx.size() < 3) {
      rep.skipped_classes.push_back(cls);
      continue;
    }
    double cx = 0.0, cy = 0.0;
    for (auto i : idx) {
      cx += e.points[i].z1;
      cy += e.points[i].z2;
    }
    cx /= static_cast<double>(idx.size());
    cy /= static_cast<double>(idx.size());
    std::vector<double> d;
    double mean = 0.0;
    for (auto i : idx) {
      d.push_back(std::hypot(e.points[i].z1 - cx, e.points[i].z2 - cy));
      mean += d.back();
    }
    mean /= static_cast<double>(idx.size());
    for (std::size_t m = 0; m < idx.size(); ++m)
      if (d[m] > k_sigma * mean) e.points[idx[m]].suggested = true;
  }
  for (const auto& pt : e.points)
    if (pt.suggested) rep.flagged.push_back(pt.id);
  return rep;
}

inline nlohmann::json embedding_to_json(const Embedding2D& e) {
  auto j = nlohmann::json::array();
  for (const auto& p : e.points)
    j.push_back({{"id", p.id}, {"z1", p.z1}, {"z2", p.z2}, {"class", p.cls}, {"suggested", p.suggested}});
  return j;
}

inline Embedding2D embedding_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("embedding JSON must be an array");
  Embedding2D e;
  for (const auto& p : j) {
    e.points.push_back({p.at("id").get<std::string>(), p.at("z1").get<double>(), p.at("z2").get<double>(),
                        p.at("class").get<std::string>(), p.value("suggested", false)});
  }
  return e;
}

}  // namespace trajscope
