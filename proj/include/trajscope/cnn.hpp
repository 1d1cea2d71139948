#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"
#include "trajscope/nn/adam.hpp"
#include "trajscope/nn/checkpoint.hpp"
#include "trajscope/nn/loss.hpp"
#include "trajscope/nn/network.hpp"
#include "trajscope/raster.hpp"
#include "trajscope/rng.hpp"

namespace trajscope {

struct TrainingConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 20;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch size must be at least 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// Held-out accuracy; NaN when no held-out set was given.
  double test_accuracy = std::nan("");
};

inline nlohmann::json history_to_json(const std::vector<EpochRecord>& h) {
  auto j = nlohmann::json::array();
  for (const auto& r : h) {
    nlohmann::json e{{"epoch", r.epoch}, {"train_loss", r.train_loss}};
    e["test_accuracy"] = std::isnan(r.test_accuracy) ? nlohmann::json(nullptr) : nlohmann::json(r.test_accuracy);
    j.push_back(e);
  }
  return j;
}

struct ClassPosterior {
  std::vector<double> probabilities;
  std::size_t cls = 0;
  double confidence = 0.0;
};

/// Lowest index wins an exact tie.
inline ClassPosterior posterior_from_probabilities(std::vector<double> p) {
  ClassPosterior out;
  out.cls = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  out.confidence = p[out.cls];
  out.probabilities = std::move(p);
  return out;
}

/// Default classifier layout: three conv-relu-pool stages, then two dense layers.
inline nn::NetworkSpec cnn_spec(std::size_t num_classes) {
  using nn::LayerSpec;
  return {LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2),
          LayerSpec::conv(32, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2),
          LayerSpec::conv(64, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2),
          LayerSpec::flatten(),         LayerSpec::dense(128), LayerSpec::relu(),
          LayerSpec::dense(num_classes)};
}

/// Copies interleaved HWC images into an [N, 3, H, W] batch.
template <class T>
nn::Tensor<T> images_to_chw(std::span<const GradientImage* const> images, int width, int height) {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  nn::Tensor<T> x({images.size(), 3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = *images[n];
    if (img.width != width || img.height != height) {
      throw ValidationError("image '" + img.id + "' is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                            ", model expects " + std::to_string(width) + "x" + std::to_string(height));
    }
    T* dst = x.data() + n * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) dst[c * plane + p] = static_cast<T>(img.rgb[p * 3 + c]);
  }
  return x;
}

/// Trajectory-class CNN over square gradient images.
template <class T>
class CnnClassifier {
 public:
  CnnClassifier(std::size_t num_classes, int resolution, std::uint64_t seed)
      : num_classes_(check_classes(num_classes)), resolution_(check_resolution(resolution)),
        net_(cnn_spec(num_classes), {3, static_cast<std::size_t>(resolution), static_cast<std::size_t>(resolution)},
             CounterRng(seed), "cnn") {}

  [[nodiscard]] std::size_t num_classes() const { return num_classes_; }
  [[nodiscard]] int resolution() const { return resolution_; }
  [[nodiscard]] nn::Network<T>& network() { return net_; }
  [[nodiscard]] std::uint64_t steps() const { return steps_; }

  /**
   * Minimizes softmax cross-entropy with Adam. Each epoch visits the training
   * set in an order drawn from stream "cnn/shuffle/<epoch>"; held-out accuracy
   * is recorded after every epoch when a test set is supplied.
   */
  std::vector<EpochRecord> train(std::span<const GradientImage* const> images, std::span<const std::size_t> labels,
                                 const TrainingConfig& cfg, std::span<const GradientImage* const> test_images = {},
                                 std::span<const std::size_t> test_labels = {},
                                 const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (images.size() != labels.size() || test_images.size() != test_labels.size()) {
      throw ValidationError("image and label counts differ");
    }
    std::vector<std::size_t> per_class(num_classes_, 0);
    for (auto l : labels) {
      if (l >= num_classes_) throw ValidationError("label " + std::to_string(l) + " outside the class range");
      ++per_class[l];
    }
    std::string missing;
    for (std::size_t k = 0; k < num_classes_; ++k)
      if (per_class[k] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(k);
    if (!missing.empty()) throw ValidationError("classes absent from the training split: " + missing);

    nn::Adam<T> opt(net_.params(), {cfg.learning_rate});
    const CounterRng shuffle_root = CounterRng(cfg.seed).split("cnn/shuffle");
    std::vector<EpochRecord> history;
    std::vector<std::size_t> order(images.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto rng = shuffle_root.split(epoch);
      rng.shuffle(order);
      double total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::vector<const GradientImage*> batch;
        std::vector<std::size_t> targets;
        for (std::size_t i = start; i < end; ++i) {
          batch.push_back(images[order[i]]);
          targets.push_back(labels[order[i]]);
        }
        net_.zero_grad();
        const auto logits = net_.forward(images_to_chw<T>(batch, resolution_, resolution_));
        const auto out = nn::softmax_cross_entropy(logits, targets);
        net_.backward(out.grad, false);
        opt.step();
        total += out.loss * static_cast<double>(end - start);
      }
      steps_ = opt.steps();
      EpochRecord rec{epoch, total / static_cast<double>(order.size())};
      if (!test_images.empty()) rec.test_accuracy = accuracy(test_images, test_labels);
      history.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
    return history;
  }

  [[nodiscard]] std::vector<ClassPosterior> classify(std::span<const GradientImage* const> images) {
    std::vector<ClassPosterior> out;
    out.reserve(images.size());
    constexpr std::size_t chunk = 64;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
      const auto part = images.subspan(start, std::min(chunk, images.size() - start));
      const auto logits = net_.forward(images_to_chw<T>(part, resolution_, resolution_));
      for (std::size_t i = 0; i < part.size(); ++i)
        out.push_back(posterior_from_probabilities(nn::softmax_row(logits.data() + i * num_classes_, num_classes_)));
    }
    return out;
  }

  [[nodiscard]] ClassPosterior classify(const GradientImage& image) {
    const GradientImage* p = &image;
    return classify(std::span<const GradientImage* const>(&p, 1)).front();
  }

  [[nodiscard]] double accuracy(std::span<const GradientImage* const> images, std::span<const std::size_t> labels) {
    if (images.empty()) return std::nan("");
    const auto post = classify(images);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < post.size(); ++i) hit += post[i].cls == labels[i];
    return static_cast<double>(hit) / static_cast<double>(images.size());
  }

  [[nodiscard]] std::vector<std::uint8_t> save(nlohmann::json extra = nlohmann::json::object()) {
    extra["kind"] = "cnn";
    extra["spec"] = nn::to_json(net_.spec());
    extra["input"] = net_.input_shape();
    extra["num_classes"] = num_classes_;
    extra["step"] = steps_;
    return nn::encode_checkpoint<T>(extra, nn::collect_tensors(net_.params()));
  }

  static CnnClassifier load(const std::vector<std::uint8_t>& bytes, const std::string& what = "cnn checkpoint") {
    const auto ck = nn::decode_checkpoint<T>(bytes, what);
    if (ck.header.value("kind", "") != "cnn") throw ValidationError(what + " is not a CNN checkpoint");
    const auto input = ck.header.at("input").template get<nn::Shape>();
    CnnClassifier model(ck.header.at("num_classes").template get<std::size_t>(), static_cast<int>(input.at(1)), 0);
    if (nn::network_spec_from_json(ck.header.at("spec")) != model.net_.spec()) {
      throw ValidationError(what + " was written for a different layer layout");
    }
    nn::restore_tensors(ck, model.net_.params());
    model.steps_ = ck.header.value("step", std::uint64_t{0});
    return model;
  }

 private:
  static std::size_t check_classes(std::size_t c) {
    if (c < 2) throw ValidationError("a classifier needs at least 2 classes, got " + std::to_string(c));
    return c;
  }

  static int check_resolution(int r) {
    if (r < 8 || r % 8 != 0) {
      const int lower = std::max(8, r / 8 * 8);
      throw ValidationError("resolution " + std::to_string(r) +
                            " must be a positive multiple of 8 (three 2x2 poolings); nearest valid size is " +
                            std::to_string(r - lower <= lower + 8 - r || r < 8 ? lower : lower + 8));
    }
    return r;
  }

  std::size_t num_classes_;
  int resolution_;
  nn::Network<T> net_;
  std::uint64_t steps_ = 0;
};

}  // namespace trajscope
