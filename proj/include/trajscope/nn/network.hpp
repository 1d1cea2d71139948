#pragma once

#include <memory>
#include <string>
#include <vector>

#include "trajscope/nn/layers.hpp"

namespace trajscope::nn {

/// Per-sample output shape of a whole spec, validating every layer.
inline Shape infer_output_shape(const NetworkSpec& spec, Shape in) {
  for (std::size_t i = 0; i < spec.size(); ++i) in = infer_shape(spec[i], in, i);
  return in;
}

/**
 * Sequential stack built from a NetworkSpec for a fixed per-sample input
 * shape. Weights are drawn from streams named "<prefix>/init/layer<i>";
 * layers followed by relu get He-uniform init, others Glorot-uniform.
 */
template <class T>
class Network {
 public:
  Network(NetworkSpec spec, Shape input, const CounterRng& seed_stream, const std::string& prefix)
      : spec_(std::move(spec)), input_(std::move(input)) {
    Shape cur = input_;
    for (std::size_t i = 0; i < spec_.size(); ++i) {
      const auto& s = spec_[i];
      Shape next = infer_shape(s, cur, i);
      const bool he = i + 1 < spec_.size() && spec_[i + 1].kind == LayerKind::relu;
      auto rng = seed_stream.split(prefix + "/init/layer" + std::to_string(i));
      switch (s.kind) {
        case LayerKind::conv: {
          auto l = std::make_unique<Conv2d<T>>(cur, s, i);
          l->init(rng, he);
          layers_.push_back(std::move(l));
          break;
        }
        case LayerKind::dense: {
          auto l = std::make_unique<Dense<T>>(cur, s, i);
          l->init(rng, he);
          layers_.push_back(std::move(l));
          break;
        }
        case LayerKind::maxpool: layers_.push_back(std::make_unique<MaxPool<T>>(cur, s, i)); break;
        case LayerKind::relu: layers_.push_back(std::make_unique<Relu<T>>()); break;
        case LayerKind::sigmoid: layers_.push_back(std::make_unique<Sigmoid<T>>()); break;
        case LayerKind::flatten: layers_.push_back(std::make_unique<Flatten<T>>()); break;
      }
      shapes_.push_back(next);
      cur = std::move(next);
    }
  }

  [[nodiscard]] const NetworkSpec& spec() const { return spec_; }
  [[nodiscard]] const Shape& input_shape() const { return input_; }
  [[nodiscard]] const Shape& output_shape() const { return shapes_.empty() ? input_ : shapes_.back(); }
  /// Per-sample output shape after each layer.
  [[nodiscard]] const std::vector<Shape>& layer_shapes() const { return shapes_; }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i]->forward(h);
      if (!h.all_finite()) {
        throw ValidationError("non-finite activation after layer " + std::to_string(i) + " (" +
                              kind_name(spec_[i].kind) + ")");
      }
    }
    return h;
  }

  /// Backpropagates gy; the returned input gradient is empty when
  /// input_grad is false (saves the widest product of an image encoder).
  Tensor<T> backward(const Tensor<T>& gy, bool input_grad = true) {
    Tensor<T> g = gy;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, input_grad || i > 0);
    return g;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.fill(T(0));
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }

 private:
  NetworkSpec spec_;
  Shape input_;
  std::vector<Shape> shapes_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace trajscope::nn
