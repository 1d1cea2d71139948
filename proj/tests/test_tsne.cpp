#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "trajscope/tsne.hpp"

using namespace trajscope;

namespace {

const std::vector<std::vector<double>> kTen = {{0, 0, 0},     {1, 0, 0.5},  {0.2, 1.5, 0},  {3, 1, 1},
                                               {2.5, 2, 0.1}, {-1, 0.3, 2}, {0.7, 0.7, 0.7}, {4, 0, -1},
                                               {1.2, -2, 0.4}, {-0.5, -1, -0.5}};

std::vector<std::vector<double>> layout(const TsneResult& r) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < r.y.size() / 2; ++i) out.push_back({r.y[2 * i], r.y[2 * i + 1]});
  return out;
}

double silhouette(const std::vector<std::vector<double>>& y, const std::vector<std::string>& cls) {
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::map<std::string, std::pair<double, int>> by;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (i == j) continue;
      auto& e = by[cls[j]];
      e.first += std::hypot(y[i][0] - y[j][0], y[i][1] - y[j][1]);
      ++e.second;
    }
    const double a = by[cls[i]].first / by[cls[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [c, e] : by)
      if (c != cls[i]) b = std::min(b, e.first / e.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(y.size());
}

}  // namespace

TEST(TsneAffinities, MatchesReferenceCalibration) {
  // Reference rows from an independent binary-search implementation (perplexity 3).
  const std::vector<std::pair<std::size_t, std::vector<double>>> ref = {
      {0, {0.0, 0.5066416412349717, 0.017733931456585243, 1.1367807950692467e-14, 1.2348162705465702e-13,
           2.1334624403599214e-06, 0.24930033433373006, 4.5318679681620283e-23, 4.122269611981903e-07,
           0.22632154728517656}},
      {3, {0.006007300126325299, 0.12323082825888787, 0.016387200540199005, 0.0, 0.6585918851628948,
           0.00019851142017324446, 0.10977908903293478, 0.08309668724033716, 0.0025917305092689703,
           0.00011676770897882037}},
      {7, {0.006465888468368336, 0.06691339555532178, 0.0048847453894380125, 0.5651283199714314,
           0.3122155727784059, 6.2260682483093945e-06, 0.019610009749252928, 0.0, 0.023737428119972624,
           0.0010384138995607215}}};
  const auto a = conditional_affinities(squared_distances(kTen), 10, 3.0);
  for (const auto& [i, row] : ref)
    for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(a.conditional[i * 10 + j], row[j], 1e-4) << i << "," << j;
}

TEST(TsneAffinities, RowsAreDistributionsAndPerplexityIsCalibrated) {
  const auto b = test_support::latent_blobs(4, 30, 6, 3.0, 2);
  const std::size_t n = b.rows.size();
  const auto a = conditional_affinities(squared_distances(b.rows), n, 20.0);
  EXPECT_EQ(a.unconverged, 0u);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0, h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = a.conditional[i * n + j];
      s += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_EQ(a.conditional[i * n + i], 0.0);
    // Perplexity recomputed from the row itself.
    EXPECT_NEAR(std::exp(h), 20.0, 1e-3);
    EXPECT_NEAR(a.perplexity[i], 20.0, 1e-3);
  }
  const auto p = symmetrize(a.conditional, n);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(p[i * n + j], p[j * n + i]);
}

TEST(TsneAffinities, ScaleAwareSearchHandlesTinyDistances) {
  auto rows = kTen;
  for (auto& r : rows)
    for (auto& v : r) v *= 1e-9;
  const auto a = conditional_affinities(squared_distances(rows), 10, 3.0);
  EXPECT_EQ(a.unconverged, 0u);
  for (double p : a.perplexity) EXPECT_NEAR(p, 3.0, 1e-3);
}

TEST(TsneObjective, GradientMatchesFiniteDifferences) {
  const std::size_t n = 10;
  const auto p = symmetrize(conditional_affinities(squared_distances(kTen), n, 3.0).conditional, n);
  CounterRng rng(3);
  std::vector<double> y(2 * n), grad, w;
  for (auto& v : y) v = rng.normal();
  const double kl = tsne_gradient(p, y, n, 1.0, grad, w);
  EXPECT_NEAR(kl, tsne_kl(p, y, n), 1e-12);
  for (std::size_t k = 0; k < 2 * n; ++k) {
    auto up = y, dn = y;
    up[k] += 1e-6;
    dn[k] -= 1e-6;
    const double fd = (tsne_kl(p, up, n) - tsne_kl(p, dn, n)) / 2e-6;
    EXPECT_NEAR(grad[k], fd, 1e-6 * std::max(1.0, std::abs(fd))) << k;
  }
}

TEST(TsneObjective, KlOfMatchingDistributionIsZero) {
  // Four points on a unit square: P chosen equal to Q of that layout.
  const std::vector<double> y{0, 0, 1, 0, 0, 1, 1, 1};
  std::vector<double> q(16, 0.0);
  double z = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      q[i * 4 + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      z += q[i * 4 + j];
    }
  for (auto& v : q) v /= z;
  EXPECT_NEAR(tsne_kl(q, y, 4), 0.0, 1e-15);
}

TEST(Tsne, SeparatesTwoBlobs) {
  const auto b = test_support::latent_blobs(2, 40, 16, 4.0, 5);
  TsneConfig cfg;
  cfg.iterations = 500;
  const auto r = tsne(b.rows, cfg);
  EXPECT_GT(silhouette(layout(r), b.classes), 0.5);
}

TEST(Tsne, ObjectiveDropsAfterExaggeration) {
  const auto b = test_support::latent_blobs(5, 30, 10, 2.0, 6);
  TsneConfig cfg;
  cfg.iterations = 600;
  const auto r = tsne(b.rows, cfg);
  ASSERT_FALSE(std::isnan(r.kl_after_exaggeration));
  EXPECT_LT(r.final_kl, r.kl_after_exaggeration);
  EXPECT_LT(r.final_kl, r.initial_kl);
  EXPECT_EQ(r.kl_trace.back().first, 600u);
}

TEST(Tsne, DegenerateSimplexStaysFinite) {
  const std::vector<std::vector<double>> simplex{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  std::vector<std::string> warnings;
  auto prev = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  TsneConfig cfg;
  cfg.iterations = 300;
  const auto r = tsne(simplex, cfg);
  set_warning_sink(prev);
  for (double v : r.y) EXPECT_TRUE(std::isfinite(v));
  EXPECT_FALSE(warnings.empty());  // perplexity capped
}

TEST(Tsne, PermutedInputGivesPermutedOutput) {
  const auto b = test_support::latent_blobs(3, 20, 5, 2.0, 8);
  TsneConfig cfg;
  cfg.iterations = 300;
  const auto r = tsne(b.rows, cfg);
  std::vector<std::size_t> perm(b.rows.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng(9).shuffle(perm);
  std::vector<std::vector<double>> permuted;
  for (auto i : perm) permuted.push_back(b.rows[i]);
  const auto rp = tsne(permuted, cfg);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    EXPECT_NEAR(rp.y[2 * k], r.y[2 * perm[k]], 1e-9);
    EXPECT_NEAR(rp.y[2 * k + 1], r.y[2 * perm[k] + 1], 1e-9);
  }
  EXPECT_EQ(tsne(b.rows, cfg).y, r.y);
}

TEST(Tsne, DuplicatesAreJitteredWithWarning) {
  auto rows = kTen;
  rows.push_back(rows[2]);
  rows.push_back(rows[2]);
  std::vector<std::string> warnings;
  auto prev = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  TsneConfig cfg;
  cfg.iterations = 200;
  const auto r = tsne(rows, cfg);
  set_warning_sink(prev);
  bool jitter = false;
  for (const auto& w : warnings) jitter |= w.find("duplicate") != std::string::npos;
  EXPECT_TRUE(jitter);
  for (double v : r.y) EXPECT_TRUE(std::isfinite(v));
}

TEST(Tsne, RejectsInvalidInput) {
  EXPECT_THROW(tsne({{0.0}, {1.0}, {2.0}}, TsneConfig{}), ValidationError);
  EXPECT_THROW(tsne({{0.0}, {1.0}, {2.0}, {std::nan("")}}, TsneConfig{}), ValidationError);
  TsneConfig bad;
  bad.perplexity = 1.5;
  EXPECT_THROW(tsne(kTen, bad), ValidationError);
  bad = TsneConfig{};
  bad.iterations = 0;
  EXPECT_THROW(tsne(kTen, bad), ValidationError);
}

TEST(Trustworthiness, MatchesReferenceValues) {
  const std::vector<std::vector<double>> y = {{0, 0},    {1, 0.2},  {0.1, 1.4},  {2.9, 1.2}, {2.4, 1.8},
                                              {-1.2, 0.5}, {0.9, 0.5}, {3.6, -0.2}, {1.5, -2.1}, {-0.3, -1.2}};
  EXPECT_NEAR(trustworthiness(kTen, y, 1), 0.975, 1e-12);
  EXPECT_NEAR(trustworthiness(kTen, y, 2), 0.9615384615384616, 1e-12);
  EXPECT_NEAR(trustworthiness(kTen, y, 3), 0.9466666666666667, 1e-12);
  EXPECT_NEAR(trustworthiness(kTen, y, 4), 0.9357142857142857, 1e-12);
  const std::vector<std::size_t> perm{3, 1, 2, 0, 4, 5, 9, 7, 8, 6};
  std::vector<std::vector<double>> scrambled;
  for (auto i : perm) scrambled.push_back(y[i]);
  EXPECT_NEAR(trustworthiness(kTen, scrambled, 2), 0.4769230769230769, 1e-12);
  EXPECT_NEAR(trustworthiness(kTen, scrambled, 3), 0.6066666666666667, 1e-12);
  EXPECT_DOUBLE_EQ(trustworthiness(kTen, kTen, 4), 1.0);
  EXPECT_THROW(trustworthiness(kTen, y, 5), ValidationError);
}

TEST(SuggestOutliers, FlagsOnlyTheFarPoint) {
  Embedding2D e;
  // Tight ring of 8 at radius 1 plus one point at distance 50 from the origin.
  for (int i = 0; i < 8; ++i) {
    const double a = i * M_PI / 4;
    e.points.push_back({"p" + std::to_string(i), std::cos(a), std::sin(a), "a", false});
  }
  e.points.push_back({"far", 50.0, 0.0, "a", false});
  // Direct computation: centroid x = 50/9, distances and their mean.
  const double cx = 50.0 / 9.0;
  double mean = 0.0;
  std::vector<double> d;
  for (const auto& p : e.points) {
    d.push_back(std::hypot(p.z1 - cx, p.z2));
    mean += d.back() / 9.0;
  }
  ASSERT_GT(d.back(), 3.0 * mean);
  for (std::size_t i = 0; i < 8; ++i) ASSERT_LT(d[i], 3.0 * mean);
  const auto rep = suggest_outliers(e, 3.0);
  EXPECT_EQ(rep.flagged, std::vector<std::string>{"far"});
  EXPECT_TRUE(e.points.back().suggested);
  EXPECT_TRUE(suggest_outliers(e, std::numeric_limits<double>::infinity()).flagged.empty());
}

TEST(SuggestOutliers, CoincidentAndSmallClasses) {
  Embedding2D e;
  for (int i = 0; i < 5; ++i) e.points.push_back({"c" + std::to_string(i), 2.0, 2.0, "same", false});
  e.points.push_back({"s0", 0.0, 0.0, "small", false});
  e.points.push_back({"s1", 100.0, 0.0, "small", false});
  const auto rep = suggest_outliers(e);
  EXPECT_TRUE(rep.flagged.empty());
  EXPECT_EQ(rep.skipped_classes, std::vector<std::string>{"small"});
  e.points.push_back({"x", 0.0, 0.0, "", false});
  EXPECT_THROW(suggest_outliers(e), ValidationError);
}

TEST(Embedding, JsonRoundTripAndExport) {
  const auto b = test_support::latent_blobs(2, 5, 3, 3.0, 1);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < b.rows.size(); ++i) ids.push_back("t" + std::to_string(i));
  TsneConfig cfg;
  cfg.iterations = 100;
  auto e = embed(ids, b.rows, b.classes, cfg);
  suggest_outliers(e, 1.0);
  const auto j = embedding_to_json(e);
  ASSERT_EQ(j.size(), 10u);
  EXPECT_EQ(j[0].size(), 5u);
  EXPECT_EQ(j[3]["id"], "t3");
  const auto back = embedding_from_json(j);
  for (std::size_t i = 0; i < e.points.size(); ++i) {
    EXPECT_EQ(back.points[i].z1, e.points[i].z1);
    EXPECT_EQ(back.points[i].suggested, e.points[i].suggested);
    EXPECT_EQ(back.points[i].cls, e.points[i].cls);
  }
  EXPECT_THROW(embed({"a"}, b.rows, b.classes, cfg), ValidationError);
}
