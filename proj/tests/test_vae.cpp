#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "trajscope/nn/grad_check.hpp"
#include "trajscope/synth.hpp"
#include "trajscope/vae.hpp"

using namespace trajscope;

namespace {

std::vector<const GradientImage*> pointers(const std::vector<GradientImage>& v) {
  std::vector<const GradientImage*> out;
  for (const auto& i : v) out.push_back(&i);
  return out;
}

std::vector<GradientImage> small_corpus(std::size_t per_class, int res, std::uint64_t seed) {
  const auto ds = synth_generate(junction_scene(per_class, seed));
  RasterConfig rc;
  rc.width = rc.height = res;
  rc.thickness = 1;
  rc.margin = 0;
  rc.bounds = SceneBounds{};
  std::vector<GradientImage> out;
  for (const auto& tr : ds.trajectories) out.push_back(rasterize(tr, rc));
  return out;
}

}  // namespace

TEST(VaeLossTerms, KldClosedForms) {
  const std::vector<double> zero(5, 0.0), one(5, 1.0);
  EXPECT_EQ(gaussian_kld(zero, zero), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_kld(one, zero), 2.5);
  CounterRng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> mu(4), lv(4);
    for (auto& v : mu) v = rng.normal(0, 3);
    for (auto& v : lv) v = rng.uniform(-10, 10);
    EXPECT_GE(gaussian_kld(mu, lv), 0.0);
  }
}

TEST(VaeLossTerms, PerfectBinaryReconstructionHasZeroLogLikelihood) {
  const std::vector<float> x{0, 1, 1, 0, 1};
  EXPECT_EQ(bernoulli_log_likelihood(x, x), 0.0);
  const std::vector<float> half(5, 0.5f);
  EXPECT_NEAR(bernoulli_log_likelihood(x, half), 5 * std::log(0.5), 1e-12);
}

TEST(VaeLossTerms, LogitFormMatchesProbabilityForm) {
  Vae<double> vae({4, 4, 6, 2}, 3);
  CounterRng rng(2);
  GradientImage img("i", 4, 4);
  for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
  const std::vector<const GradientImage*> one{&img};
  const auto x = vae.flatten(one);
  const nn::Tensor<double> noise({1, 2}, std::vector<double>{0.3, -1.1});
  const auto l = vae.loss(x, noise).front();
  // Recompute through the probability form: decode the same z by hand.
  std::vector<double> mu, lv;
  vae.encode(one, mu, lv);
  nn::Tensor<double> z({1, 2});
  for (int j = 0; j < 2; ++j) z[j] = mu[j] + std::exp(0.5 * lv[j]) * noise[j];
  const auto a = vae.decoder().forward(z);
  std::vector<float> p(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) p[i] = static_cast<float>(1.0 / (1.0 + std::exp(-a[i])));
  EXPECT_NEAR(l.ll, bernoulli_log_likelihood(img.rgb, p), 1e-5);
  EXPECT_NEAR(l.kld, gaussian_kld(mu, lv), 1e-12);
  EXPECT_EQ(l.total, -l.ll + l.kld);
}

TEST(VaeGradients, FrozenNoiseMatchesFiniteDifferences) {
  Vae<double> vae({3, 3, 10, 3}, 7);
  CounterRng rng(8);
  std::vector<GradientImage> imgs(2, GradientImage("g", 3, 3));
  for (auto& img : imgs)
    for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
  const auto x = vae.flatten(pointers(imgs));
  nn::Tensor<double> noise({2, 3});
  for (auto& v : noise.values()) v = rng.normal();
  auto loss = [&] {
    double s = 0.0;
    for (const auto& l : vae.loss(x, noise)) s += l.total;
    return s / 2.0;
  };
  auto analytic = [&] {
    vae.zero_grad();
    vae.loss(x, noise, 0.5);
  };
  const auto rep = nn::grad_check(vae.params(), loss, analytic, 1e-5, 1e-4, rng.split("coords"));
  EXPECT_TRUE(rep.passed()) << rep.max_relative_error << " at " << rep.worst_parameter;
}

TEST(VaeGradients, ClampedLogVarianceWarnsAndBlocksGradient) {
  Vae<double> vae({2, 2, 4, 1}, 1);
  auto* bias = vae.encoder().params()[3];
  bias->value[1] = 50.0;  // log-variance head far above the clamp
  std::vector<std::string> warnings;
  auto prev = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  const GradientImage img("c", 2, 2);
  const std::vector<const GradientImage*> one{&img};
  vae.zero_grad();
  const auto l = vae.loss(vae.flatten(one), nn::Tensor<double>({1, 1}, 0.5), 1.0);
  set_warning_sink(prev);
  EXPECT_FALSE(warnings.empty());
  EXPECT_TRUE(std::isfinite(l.front().total));
  EXPECT_EQ(bias->grad[1], 0.0);
}

TEST(Threshold, FactorTimesMean) {
  EXPECT_DOUBLE_EQ(compute_threshold({418.0}, 2.0).delta, 836.0);
  EXPECT_DOUBLE_EQ(compute_threshold({400.0, 436.0}, 2.0).delta, 836.0);
  EXPECT_DOUBLE_EQ(compute_threshold({1, 1, 1}, 1.0).delta, 1.0);
  const auto t = compute_threshold({2, 4, 4, 4, 5, 5, 7, 9}, 1.5);
  EXPECT_DOUBLE_EQ(t.delta, 1.5 * 5.0);
  EXPECT_DOUBLE_EQ(t.stddev, 2.0);
  EXPECT_THROW(compute_threshold({}), ValidationError);
  EXPECT_THROW(compute_threshold({1.0}, 0.0), ValidationError);
}

TEST(Threshold, PermutationInvariant) {
  CounterRng rng(4);
  std::vector<double> losses(997);
  for (auto& l : losses) l = std::exp(rng.normal(6, 1.5));
  const double ref = compute_threshold(losses).delta;
  for (int i = 0; i < 20; ++i) {
    rng.shuffle(losses);
    EXPECT_EQ(compute_threshold(losses).delta, ref);
  }
}

TEST(VaeTraining, SingleImageOverfitConverges) {
  Vae<float> vae({8, 8, 32, 4}, 5);
  GradientImage img("one", 8, 8);
  for (int x = 1; x < 7; ++x) {
    img.at(x, 3, 0) = 1.0f;
    img.at(x, 4, 1) = 1.0f;
  }
  const std::vector<const GradientImage*> one{&img};
  TrainingConfig cfg;
  cfg.epochs = 400;
  cfg.batch_size = 1;
  cfg.learning_rate = 3e-3;
  const auto h = vae.train(one, cfg);
  double tail_min = h.back().train_loss;
  for (std::size_t e = h.size() - 50; e < h.size(); ++e) tail_min = std::min(tail_min, h[e].train_loss);
  EXPECT_LE(h.back().train_loss, 1.05 * tail_min + 0.5);
  EXPECT_LT(h.back().train_loss, 0.2 * h.front().train_loss);
}

TEST(VaeTraining, RejectsEmptyTrainingSet) {
  Vae<float> vae({8, 8, 4, 2}, 1);
  EXPECT_THROW(vae.train({}, TrainingConfig{}), ValidationError);
}

TEST(VaeScoring, MonteCarloAverageIsConsistent) {
  const auto imgs = small_corpus(7, 16, 3);
  Vae<float> vae({16, 16, 64, 8}, 2);
  TrainingConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 1e-3;
  vae.train(pointers(imgs), cfg);
  const auto ptrs = pointers(imgs);
  const std::span<const GradientImage* const> fifty(ptrs.data(), 50);
  const auto m8 = vae.reconstruction_loss(fifty, 8, 11);
  const auto m64 = vae.reconstruction_loss(fifty, 64, 11);
  // Spread of single draws, from independent seeds.
  std::vector<std::vector<double>> singles;
  for (std::uint64_t s = 100; s < 132; ++s) singles.push_back(vae.reconstruction_loss(fifty, 1, s));
  std::size_t within = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    double mean = 0.0, ss = 0.0;
    for (const auto& v : singles) mean += v[i] / 32.0;
    for (const auto& v : singles) ss += (v[i] - mean) * (v[i] - mean);
    const double se = std::sqrt(ss / 31.0 / 8.0);
    within += std::abs(m8[i] - m64[i]) < 3.0 * se + 1e-6;
  }
  EXPECT_GE(within, 49u);
}

TEST(VaeScoring, DeterministicPerImageStreams) {
  const auto imgs = small_corpus(2, 16, 4);
  Vae<float> vae({16, 16, 32, 4}, 2);
  const auto ptrs = pointers(imgs);
  const auto all = vae.reconstruction_loss(ptrs, 8, 5);
  for (std::size_t i = 0; i < imgs.size(); ++i) EXPECT_EQ(vae.reconstruction_loss(imgs[i], 8, 5), all[i]);
  EXPECT_EQ(vae.reconstruction_loss(imgs[0], 0), vae.reconstruction_loss(imgs[0], 0));
  EXPECT_NE(vae.reconstruction_loss(imgs[0], 8, 5), vae.reconstruction_loss(imgs[0], 8, 6));
}

TEST(VaeScoring, MonochromeReversalScoresIdentically) {
  const auto ds = synth_generate(junction_scene(3, 8));
  RasterConfig mono;
  mono.width = mono.height = 16;
  mono.bounds = SceneBounds{};
  mono.mode = ColorMode::monochrome;
  Vae<float> vae({16, 16, 32, 4}, 9);
  for (const auto& tr : ds.trajectories) {
    const auto a = rasterize(tr, mono);
    const auto b = rasterize(reverse(tr, tr.id()), mono);
    EXPECT_EQ(vae.reconstruction_loss(a, 8, 1), vae.reconstruction_loss(b, 8, 1));
  }
}

TEST(VaeReconstruct, UntrainedOutputIsWellFormed) {
  Vae<float> vae({12, 10, 16, 3}, 1);
  const GradientImage img("u", 12, 10);
  const auto r = vae.reconstruct(img);
  EXPECT_EQ(r.width, 12);
  EXPECT_EQ(r.height, 10);
  for (float v : r.rgb) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(vae.reconstruct(GradientImage("w", 10, 10)), ValidationError);
}

TEST(VaeCheckpoint, RoundTrip) {
  Vae<float> vae({8, 8, 16, 3}, 4);
  const auto bytes = vae.save();
  auto back = Vae<float>::load(bytes);
  EXPECT_EQ(back.dims(), vae.dims());
  const GradientImage img("k", 8, 8, Rgb{0.2, 0.5, 1.0});
  EXPECT_EQ(back.reconstruction_loss(img), vae.reconstruction_loss(img));
  EXPECT_EQ(back.save(), bytes);
}
