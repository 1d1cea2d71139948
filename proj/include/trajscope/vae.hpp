#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajscope/cnn.hpp"
#include "trajscope/errors.hpp"
#include "trajscope/nn/adam.hpp"
#include "trajscope/nn/checkpoint.hpp"
#include "trajscope/nn/network.hpp"
#include "trajscope/raster.hpp"
#include "trajscope/rng.hpp"

namespace trajscope {

struct VaeDims {
  int width = 64;
  int height = 64;
  std::size_t hidden = 512;
  std::size_t latent = 32;

  [[nodiscard]] std::size_t input() const { return static_cast<std::size_t>(width) * height * 3; }
  bool operator==(const VaeDims&) const = default;
};

struct VaeLoss {
  double ll = 0.0;   // expected log-likelihood (single sample)
  double kld = 0.0;  // KL(q(z|x) || N(0, I))
  double total = 0.0;
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Sum of x log p + (1 - x) log(1 - p), with 0 log 0 taken as 0.
inline double bernoulli_log_likelihood(std::span<const float> x, std::span<const float> p) {
  if (x.size() != p.size()) throw ValidationError("image and reconstruction sizes differ");
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i], pi = p[i];
    if (xi > 0.0) ll += xi * std::log(pi);
    if (xi < 1.0) ll += (1.0 - xi) * std::log1p(-pi);
  }
  return ll;
}

/// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1)
inline double gaussian_kld(std::span<const double> mu, std::span<const double> logvar) {
  double k = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) k += mu[i] * mu[i] + std::exp(logvar[i]) - logvar[i] - 1.0;
  return 0.5 * k;
}

/// log(1 + e^a) without overflow.
inline double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

struct AnomalyThreshold {
  double delta = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  double factor = 2.0;
  std::size_t count = 0;
};

inline nlohmann::json to_json(const AnomalyThreshold& t) {
  return {{"delta", t.delta}, {"mean", t.mean}, {"stddev", t.stddev}, {"factor", t.factor}, {"count", t.count}};
}

inline AnomalyThreshold threshold_from_json(const nlohmann::json& j) {
  return {j.at("delta"), j.at("mean"), j.at("stddev"), j.at("factor"), j.at("count")};
}

/// delta = factor * mean(losses). Losses are sorted before summation so the
/// result does not depend on their order.
inline AnomalyThreshold compute_threshold(std::vector<double> losses, double factor = 2.0) {
  if (losses.empty()) throw ValidationError("cannot derive a threshold from an empty loss list");
  if (!(factor > 0.0)) throw ValidationError("threshold factor must be positive");
  std::sort(losses.begin(), losses.end());
  const double n = static_cast<double>(losses.size());
  double sum = 0.0;
  for (double l : losses) sum += l;
  const double mean = sum / n;
  double ss = 0.0;
  for (double l : losses) ss += (l - mean) * (l - mean);
  AnomalyThreshold t{factor * mean, mean, std::sqrt(ss / n), factor, losses.size()};
  if (!(t.delta > 0.0)) throw ValidationError("threshold must be positive; mean training loss is " + std::to_string(mean));
  return t;
}

/**
 * Dense variational autoencoder over flattened RGB images.
 *
 * Encoder I -> H (relu) -> 2L, split into mean and log-variance; decoder
 * L -> H (relu) -> I logits with a sigmoid output. Pixel likelihood is
 * Bernoulli on [0, 1] intensities, evaluated in logit form.
 */
template <class T>
class Vae {
 public:
  Vae(VaeDims dims, std::uint64_t seed)
      : dims_(check(dims)),
        encoder_({nn::LayerSpec::dense(dims.hidden), nn::LayerSpec::relu(), nn::LayerSpec::dense(2 * dims.latent)},
                 {dims.input()}, CounterRng(seed), "vae/encoder"),
        decoder_({nn::LayerSpec::dense(dims.hidden), nn::LayerSpec::relu(), nn::LayerSpec::dense(dims.input())},
                 {dims.latent}, CounterRng(seed), "vae/decoder") {}

  [[nodiscard]] const VaeDims& dims() const { return dims_; }
  [[nodiscard]] nn::Network<T>& encoder() { return encoder_; }
  [[nodiscard]] nn::Network<T>& decoder() { return decoder_; }
  [[nodiscard]] std::uint64_t steps() const { return steps_; }
  /// Per-image training losses of the last epoch of the last train() call, in input order.
  [[nodiscard]] const std::vector<double>& final_epoch_losses() const { return final_losses_; }

  std::vector<nn::Param<T>*> params() {
    auto p = encoder_.params();
    for (auto* q : decoder_.params()) p.push_back(q);
    return p;
  }

  void zero_grad() {
    encoder_.zero_grad();
    decoder_.zero_grad();
  }

  [[nodiscard]] nn::Tensor<T> flatten(std::span<const GradientImage* const> images) const {
    nn::Tensor<T> x({images.size(), dims_.input()});
    for (std::size_t n = 0; n < images.size(); ++n) {
      const auto& img = *images[n];
      if (img.width != dims_.width || img.height != dims_.height) {
        throw ValidationError("image '" + img.id + "' is " + std::to_string(img.width) + "x" +
                              std::to_string(img.height) + ", model expects " + std::to_string(dims_.width) + "x" +
                              std::to_string(dims_.height));
      }
      for (std::size_t i = 0; i < dims_.input(); ++i) {
        const float v = img.rgb[i];
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image '" + img.id + "' has a channel outside [0, 1]");
        x[n * dims_.input() + i] = static_cast<T>(v);
      }
    }
    return x;
  }

  /**
   * Per-sample losses for a batch with explicit noise [N, L]. When
   * `grad_scale` is non-zero, gradients of grad_scale * sum(total) are
   * accumulated into the parameters.
   */
  std::vector<VaeLoss> loss(const nn::Tensor<T>& x, const nn::Tensor<T>& noise, double grad_scale = 0.0) {
    const std::size_t n = x.dim(0), L = dims_.latent, I = dims_.input();
    if (noise.shape() != nn::Shape{n, L}) throw ValidationError("noise must be [N, latent]");
    const auto h = encoder_.forward(x);
    std::vector<double> mu(n * L), logvar(n * L);
    std::vector<char> clamped(n * L, 0);
    split_heads(h, mu, logvar, clamped);

    nn::Tensor<T> z({n, L});
    for (std::size_t i = 0; i < n * L; ++i)
      z[i] = static_cast<T>(mu[i] + std::exp(0.5 * logvar[i]) * static_cast<double>(noise[i]));
    const auto a = decoder_.forward(z);

    std::vector<VaeLoss> out(n);
    nn::Tensor<T> da(grad_scale != 0.0 ? a.shape() : nn::Shape{0});
    for (std::size_t b = 0; b < n; ++b) {
      double ll = 0.0;
      for (std::size_t i = 0; i < I; ++i) {
        const double av = a[b * I + i], xv = x[b * I + i];
        ll += xv * av - softplus(av);
        if (grad_scale != 0.0) da[b * I + i] = static_cast<T>(grad_scale * (nn::sigmoid(av) - xv));
      }
      const double kld = gaussian_kld({mu.data() + b * L, L}, {logvar.data() + b * L, L});
      out[b] = {ll, kld, -ll + kld};
    }
    if (grad_scale == 0.0) return out;

    const auto dz = decoder_.backward(da);
    nn::Tensor<T> dh(h.shape());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < L; ++j) {
        const std::size_t i = b * L + j;
        const double sigma = std::exp(0.5 * logvar[i]);
        const double g = dz[i];
        dh[b * 2 * L + j] = static_cast<T>(g + grad_scale * mu[i]);
        const double dlv = g * static_cast<double>(noise[i]) * 0.5 * sigma + grad_scale * 0.5 * (std::exp(logvar[i]) - 1.0);
        dh[b * 2 * L + L + j] = clamped[i] ? T(0) : static_cast<T>(dlv);
      }
    encoder_.backward(dh, false);
    return out;
  }

  /// Posterior mean and log-variance for each image.
  void encode(std::span<const GradientImage* const> images, std::vector<double>& mu, std::vector<double>& logvar) {
    const auto h = encoder_.forward(flatten(images));
    mu.assign(images.size() * dims_.latent, 0.0);
    logvar.assign(images.size() * dims_.latent, 0.0);
    std::vector<char> clamped(mu.size(), 0);
    split_heads(h, mu, logvar, clamped);
  }

  /**
   * Trains on the given images with Adam on the batch-mean loss. Each epoch
   * is shuffled from stream "vae/shuffle/<epoch>" and draws its noise from
   * "vae/noise/<epoch>/<batch>". Returns the per-epoch mean total loss.
   */
  std::vector<EpochRecord> train(std::span<const GradientImage* const> images, const TrainingConfig& cfg,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (images.empty()) throw ValidationError("VAE training set is empty");
    nn::Adam<T> opt(params(), {cfg.learning_rate});
    const CounterRng root(cfg.seed);
    const auto shuffle_root = root.split("vae/shuffle");
    const auto noise_root = root.split("vae/noise");
    std::vector<EpochRecord> history;
    std::vector<std::size_t> order(images.size());
    final_losses_.assign(images.size(), 0.0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto srng = shuffle_root.split(epoch);
      srng.shuffle(order);
      double total = 0.0;
      for (std::size_t start = 0, batch_index = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::vector<const GradientImage*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(images[order[i]]);
        auto nrng = noise_root.split(epoch, batch_index);
        nn::Tensor<T> noise({batch.size(), dims_.latent});
        for (auto& v : noise.values()) v = static_cast<T>(nrng.normal());
        zero_grad();
        const auto losses = loss(flatten(batch), noise, 1.0 / static_cast<double>(batch.size()));
        opt.step();
        for (std::size_t i = 0; i < losses.size(); ++i) {
          total += losses[i].total;
          if (epoch == cfg.epochs) final_losses_[order[start + i]] = losses[i].total;
        }
      }
      steps_ = opt.steps();
      EpochRecord rec{epoch, total / static_cast<double>(images.size())};
      history.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
    return history;
  }

  /**
   * Mean total loss over `samples` noise draws per image; draws come from
   * stream "vae/score/<image id>" so a score depends only on the model, the
   * image and the seed. samples == 0 selects the deterministic z = mu mode.
   */
  std::vector<double> reconstruction_loss(std::span<const GradientImage* const> images, std::size_t samples = 8,
                                          std::uint64_t seed = 1) {
    std::vector<double> out;
    out.reserve(images.size());
    constexpr std::size_t chunk = 16;
    const std::size_t L = dims_.latent;
    const CounterRng root(seed);
    for (std::size_t start = 0; start < images.size(); start += chunk) {
      const auto part = images.subspan(start, std::min(chunk, images.size() - start));
      const std::size_t reps = std::max<std::size_t>(samples, 1);
      // Row (s * part + b) holds sample s of image b.
      std::vector<const GradientImage*> rows;
      for (std::size_t s = 0; s < reps; ++s) rows.insert(rows.end(), part.begin(), part.end());
      nn::Tensor<T> noise({rows.size(), L});
      if (samples > 0) {
        for (std::size_t b = 0; b < part.size(); ++b) {
          auto rng = root.split("vae/score/" + part[b]->id);
          for (std::size_t s = 0; s < samples; ++s)
            for (std::size_t j = 0; j < L; ++j) noise[(s * part.size() + b) * L + j] = static_cast<T>(rng.normal());
        }
      }
      const auto losses = loss(flatten(rows), noise);
      for (std::size_t b = 0; b < part.size(); ++b) {
        std::vector<double> per;
        for (std::size_t s = 0; s < reps; ++s) per.push_back(losses[s * part.size() + b].total);
        out.push_back(std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(reps));
      }
    }
    return out;
  }

  double reconstruction_loss(const GradientImage& image, std::size_t samples = 8, std::uint64_t seed = 1) {
    const GradientImage* p = &image;
    return reconstruction_loss(std::span<const GradientImage* const>(&p, 1), samples, seed).front();
  }

  /// Decoder output at z = mu, as an image with channels in [0, 1].
  GradientImage reconstruct(const GradientImage& image) {
    const GradientImage* p = &image;
    std::vector<double> mu, logvar;
    encode(std::span<const GradientImage* const>(&p, 1), mu, logvar);
    nn::Tensor<T> z({1, dims_.latent});
    for (std::size_t j = 0; j < dims_.latent; ++j) z[j] = static_cast<T>(mu[j]);
    const auto a = decoder_.forward(z);
    GradientImage out(image.id, dims_.width, dims_.height);
    for (std::size_t i = 0; i < dims_.input(); ++i) out.rgb[i] = static_cast<float>(nn::sigmoid(static_cast<double>(a[i])));
    return out;
  }

  [[nodiscard]] std::vector<std::uint8_t> save(nlohmann::json extra = nlohmann::json::object()) {
    extra["kind"] = "vae";
    extra["dims"] = {{"width", dims_.width}, {"height", dims_.height}, {"input", dims_.input()},
                     {"hidden", dims_.hidden}, {"latent", dims_.latent}};
    extra["step"] = steps_;
    std::vector<nn::NamedTensor<T>> tensors;
    for (auto* p : encoder_.params()) tensors.push_back({"encoder." + p->name, p->value});
    for (auto* p : decoder_.params()) tensors.push_back({"decoder." + p->name, p->value});
    return nn::encode_checkpoint<T>(extra, tensors);
  }

  static Vae load(const std::vector<std::uint8_t>& bytes, const std::string& what = "vae checkpoint") {
    const auto ck = nn::decode_checkpoint<T>(bytes, what);
    if (ck.header.value("kind", "") != "vae") throw ValidationError(what + " is not a VAE checkpoint");
    const auto& d = ck.header.at("dims");
    Vae model({d.at("width"), d.at("height"), d.at("hidden"), d.at("latent")}, 0);
    for (auto* p : model.encoder_.params()) assign(*p, ck.at("encoder." + p->name));
    for (auto* p : model.decoder_.params()) assign(*p, ck.at("decoder." + p->name));
    model.steps_ = ck.header.value("step", std::uint64_t{0});
    return model;
  }

 private:
  static VaeDims check(VaeDims d) {
    if (d.width < 1 || d.height < 1 || d.hidden < 1 || d.latent < 1) {
      throw ValidationError("VAE dimensions must be positive");
    }
    return d;
  }

  static void assign(nn::Param<T>& p, const nn::Tensor<T>& t) {
    if (t.shape() != p.value.shape()) throw ValidationError("checkpoint tensor shape mismatch for " + p.name);
    p.value = t;
  }

  void split_heads(const nn::Tensor<T>& h, std::vector<double>& mu, std::vector<double>& logvar,
                   std::vector<char>& clamped) const {
    const std::size_t n = h.dim(0), L = dims_.latent;
    bool any = false;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < L; ++j) {
        mu[b * L + j] = h[b * 2 * L + j];
        const double lv = h[b * 2 * L + L + j];
        const double c = std::clamp(lv, kLogVarMin, kLogVarMax);
        clamped[b * L + j] = c != lv;
        any = any || c != lv;
        logvar[b * L + j] = c;
      }
    if (any) warn("VAE log-variance outside [-10, 10]; clamped");
  }

  VaeDims dims_;
  nn::Network<T> encoder_;
  nn::Network<T> decoder_;
  std::uint64_t steps_ = 0;
  std::vector<double> final_losses_;
};

}  // namespace trajscope
