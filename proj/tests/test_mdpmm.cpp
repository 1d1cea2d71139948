#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "mdpmm_oracle.hpp"
#include "trajscope/mdpmm.hpp"
#include "trajscope/rng.hpp"

using namespace trajscope;
using test_support::Oracle;

namespace {

FeatureRows blobs(std::size_t per, std::uint64_t seed, std::vector<std::size_t>& truth) {
  const double centers[3][2] = {{0, 0}, {10, 0}, {5, 9}};
  CounterRng rng(seed);
  FeatureRows rows;
  truth.clear();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      rows.push_back({centers[c][0] + rng.normal(0, 0.3), centers[c][1] + rng.normal(0, 0.3)});
      truth.push_back(c);
    }
  }
  return rows;
}

}  // namespace

TEST(Mdpmm, ConditionalMatchesDenseCovarianceOracle) {
  CounterRng rng(5);
  FeatureRows x;
  for (int i = 0; i < 12; ++i) x.push_back({rng.normal(0, 1.5), rng.normal(0, 1.5)});
  const std::size_t k_max = 5;
  for (double beta : {0.5, 3.0}) {
    const double s2 = 0.3;
    CollapsedGibbsSampler sampler(x, k_max, beta, {}, {}, s2);
    Oracle oracle{x, k_max, std::exp(-beta), s2};
    for (int trial = 0; trial < 6; ++trial) {
      std::vector<std::size_t> z(x.size());
      for (auto& v : z) v = rng.below(3);  // leaves clusters 3 and 4 empty
      sampler.set_assignments(z);
      for (std::size_t i = 0; i < x.size(); ++i) {
        sampler.set_assignments(z);
        sampler.remove(i);
        const auto got = sampler.conditional(i);
        const auto want = oracle.conditional(z, i);
        double tv = 0.0;
        for (std::size_t k = 0; k < k_max; ++k) tv += 0.5 * std::abs(got[k] - want[k]);
        EXPECT_LT(tv, 1e-10) << "beta=" << beta << " i=" << i;
        EXPECT_EQ(got[3], got[4]);
      }
    }
  }
}

TEST(Mdpmm, LogJointMatchesDenseCovarianceOracle) {
  CounterRng rng(6);
  FeatureRows x;
  for (int i = 0; i < 9; ++i) x.push_back({rng.normal(), rng.normal(), rng.normal()});
  CollapsedGibbsSampler sampler(x, 4, 2.0, {}, {}, 0.05);
  Oracle oracle{x, 4, std::exp(-2.0), 0.05};
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> z(x.size());
    for (auto& v : z) v = rng.below(4);
    sampler.set_assignments(z);
    EXPECT_NEAR(sampler.log_joint(), oracle.log_joint(z), 1e-9 * std::abs(oracle.log_joint(z)));
  }
}

TEST(Mdpmm, RecoversWellSeparatedBlobs) {
  std::vector<std::size_t> truth;
  const auto rows = blobs(50, 11, truth);
  MdpmmConfig cfg;
  cfg.beta = 5.0;
  cfg.sweeps = 50;
  cfg.seed = 3;
  const auto res = fit_rows(rows, cfg);
  EXPECT_GE(adjusted_rand_index(res.assignments, truth), 0.95);
  EXPECT_EQ(res.occupied(), 3u);
  EXPECT_GT(res.log_joint.back(), res.initial_log_joint);
}

TEST(Mdpmm, LargerBetaNeverAddsClustersOnAverage) {
  CounterRng rng(21);
  FeatureRows rows;
  for (int i = 0; i < 120; ++i) rows.push_back({rng.normal(), rng.normal(), rng.uniform(0, 3)});
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {1.0, 5.0, 10.0}) {
    double mean_k = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      MdpmmConfig cfg;
      cfg.beta = beta;
      cfg.sweeps = 30;
      cfg.seed = seed;
      mean_k += static_cast<double>(fit_rows(rows, cfg).occupied()) / 10.0;
    }
    EXPECT_LE(mean_k, prev) << "beta=" << beta;
    prev = mean_k;
  }
}

TEST(Mdpmm, SameSeedSameAssignments) {
  std::vector<std::size_t> truth;
  const auto rows = blobs(20, 2, truth);
  MdpmmConfig cfg;
  cfg.sweeps = 10;
  cfg.seed = 77;
  const auto a = fit_rows(rows, cfg);
  const auto b = fit_rows(rows, cfg);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.log_joint, b.log_joint);
}

TEST(Mdpmm, SinglePointFormsOneCluster) {
  const std::vector<FeatureVector> f{{1, 2, 3, 4, 5}};
  MdpmmConfig cfg;
  cfg.sweeps = 3;
  const auto res = fit(f, cfg);
  EXPECT_EQ(res.occupied(), 1u);
  EXPECT_EQ(res.k_max, 1u);
  EXPECT_EQ(res.clusters[res.assignments[0]].mean, (std::vector<double>{1, 2, 3, 4, 5}));
}

TEST(Mdpmm, DefaultTruncationIsMinOfNAnd200) {
  std::vector<std::size_t> truth;
  MdpmmConfig cfg;
  cfg.sweeps = 1;
  EXPECT_EQ(fit_rows(blobs(10, 1, truth), cfg).k_max, 30u);
  EXPECT_EQ(fit_rows(blobs(70, 1, truth), cfg).k_max, 200u);
}

TEST(Mdpmm, RejectsBadInput) {
  MdpmmConfig cfg;
  EXPECT_THROW(fit_rows({}, cfg), ValidationError);
  EXPECT_THROW(fit_rows({{1.0, std::nan("")}}, cfg), ValidationError);
  cfg.beta = 701.0;
  EXPECT_THROW(fit_rows({{1.0, 2.0}}, cfg), ValidationError);
  cfg.beta = 700.0;
  EXPECT_NO_THROW(fit_rows({{1.0, 2.0}, {3.0, 4.0}}, cfg));
}

TEST(Mdpmm, ClusterStatisticsAreInFeatureUnits) {
  std::vector<std::size_t> truth;
  const auto rows = blobs(30, 4, truth);
  MdpmmConfig cfg;
  cfg.sweeps = 30;
  const auto res = fit_rows(rows, cfg);
  std::set<long> centers;
  for (const auto& c : res.clusters)
    if (c.count > 0) centers.insert(std::lround(c.mean[0]));
  EXPECT_EQ(centers, (std::set<long>{0, 5, 10}));
  double wsum = 0.0;
  for (double w : res.weights) wsum += w;
  EXPECT_NEAR(wsum, 1.0, 1e-12);
}

TEST(Mdpmm, PartitionSplitsByMinimumSize) {
  ClusterResult r;
  r.clusters.resize(4);
  r.clusters[0].count = 10;
  r.clusters[1].count = 0;
  r.clusters[2].count = 2;
  r.clusters[3].count = 5;
  const auto p = partition_clusters(r, 5);
  EXPECT_EQ(p.prominent, (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(p.rare, (std::vector<std::size_t>{2}));
}

TEST(AdjustedRandIndex, KnownValues) {
  const std::vector<std::size_t> a{0, 0, 1, 1, 2, 2};
  const std::vector<std::size_t> relabeled{2, 2, 0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, relabeled), 1.0);
  // Hand-computed: contingency [[1,1,0],[0,1,1],[1,0,1]] against pairs.
  const std::vector<std::size_t> b{0, 1, 1, 2, 0, 2};
  // sum_ij = 0, sum_a = sum_b = 3, expected = 9/15, max = 3.
  EXPECT_NEAR(adjusted_rand_index(a, b), (0.0 - 0.6) / (3.0 - 0.6), 1e-15);
}
