#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"
#include "trajscope/nn/gemm.hpp"
#include "trajscope/nn/tensor.hpp"
#include "trajscope/rng.hpp"

namespace trajscope::nn {

enum class LayerKind { conv, maxpool, dense, relu, sigmoid, flatten };

inline std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out = 0;      // conv filters or dense width
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 0;   // maxpool

  static LayerSpec conv(std::size_t filters, std::size_t k, std::size_t stride = 1, std::size_t padding = 0) {
    return {LayerKind::conv, filters, k, k, stride, padding, 0};
  }
  static LayerSpec maxpool(std::size_t window, std::size_t stride = 0) {
    return {LayerKind::maxpool, 0, 0, 0, stride == 0 ? window : stride, 0, window};
  }
  static LayerSpec dense(std::size_t width) { return {LayerKind::dense, width, 0, 0, 1, 0, 0}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }

  bool operator==(const LayerSpec&) const = default;
};

using NetworkSpec = std::vector<LayerSpec>;

inline nlohmann::json to_json(const LayerSpec& s) {
  nlohmann::json j{{"type", kind_name(s.kind)}};
  switch (s.kind) {
    case LayerKind::conv:
      j["out"] = s.out;
      j["kernel"] = {s.kernel_h, s.kernel_w};
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      break;
    case LayerKind::maxpool:
      j["window"] = s.window;
      j["stride"] = s.stride;
      break;
    case LayerKind::dense:
      j["out"] = s.out;
      break;
    default:
      break;
  }
  return j;
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "conv") {
    LayerSpec s = LayerSpec::conv(j.at("out"), j.at("kernel").at(0), j.at("stride"), j.at("padding"));
    s.kernel_w = j.at("kernel").at(1);
    return s;
  }
  if (type == "maxpool") return LayerSpec::maxpool(j.at("window"), j.at("stride"));
  if (type == "dense") return LayerSpec::dense(j.at("out"));
  if (type == "relu") return LayerSpec::relu();
  if (type == "sigmoid") return LayerSpec::sigmoid();
  if (type == "flatten") return LayerSpec::flatten();
  throw ValidationError("unknown layer type '" + type + "'");
}

inline nlohmann::json to_json(const NetworkSpec& spec) {
  auto j = nlohmann::json::array();
  for (const auto& l : spec) j.push_back(to_json(l));
  return j;
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  for (const auto& l : j) spec.push_back(layer_spec_from_json(l));
  return spec;
}

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                               const std::string& where) {
  if (stride == 0) throw ValidationError(where + ": stride must be positive");
  if (in + 2 * pad < k) throw ValidationError(where + ": kernel larger than padded input");
  const std::size_t span = in + 2 * pad - k;
  if (span % stride != 0) {
    throw ValidationError(where + ": output extent (" + std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
                          std::to_string(k) + ")/" + std::to_string(stride) + " + 1 is not integral");
  }
  return span / stride + 1;
}

/// Output shape of one layer for a per-sample input shape (no batch axis).
inline Shape infer_shape(const LayerSpec& s, const Shape& in, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + " (" + kind_name(s.kind) + ")";
  switch (s.kind) {
    case LayerKind::conv:
      if (in.size() != 3) throw ValidationError(where + " expects [C,H,W] input, got " + shape_string(in));
      if (s.out == 0 || s.kernel_h == 0 || s.kernel_w == 0) throw ValidationError(where + ": empty kernel");
      return {s.out, conv_extent(in[1], s.kernel_h, s.stride, s.padding, where),
              conv_extent(in[2], s.kernel_w, s.stride, s.padding, where)};
    case LayerKind::maxpool:
      if (in.size() != 3) throw ValidationError(where + " expects [C,H,W] input, got " + shape_string(in));
      if (s.window == 0 || s.stride == 0) throw ValidationError(where + ": window and stride must be positive");
      if (s.window > in[1] || s.window > in[2]) throw ValidationError(where + ": window larger than input");
      return {in[0], (in[1] - s.window) / s.stride + 1, (in[2] - s.window) / s.stride + 1};
    case LayerKind::dense:
      if (in.size() != 1) throw ValidationError(where + " expects flat input, got " + shape_string(in));
      if (s.out == 0) throw ValidationError(where + ": zero width");
      return {s.out};
    case LayerKind::flatten:
      return {volume(in)};
    default:
      return in;
  }
}

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  /// x has a leading batch axis.
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  /// Gradient w.r.t. the last forward input; parameter gradients accumulate.
  /// With need_dx false the input gradient may be skipped (empty result).
  virtual Tensor<T> backward(const Tensor<T>& gy, bool need_dx = true) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
};

namespace detail {

inline Shape with_batch(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Uniform(-limit, limit) drawn in double so float and double models agree.
template <class T>
void init_uniform(Tensor<T>& t, double limit, CounterRng& rng) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

inline void check_input(const Shape& got, const Shape& per_sample, const char* what) {
  if (got.size() != per_sample.size() + 1 || !std::equal(per_sample.begin(), per_sample.end(), got.begin() + 1)) {
    throw ValidationError(std::string(what) + " expects [N]+" + shape_string(per_sample) + ", got " +
                          shape_string(got));
  }
}

}  // namespace detail

/// 2-D cross-correlation via patch gather (im2col) and matrix products.
template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(const Shape& in, const LayerSpec& s, std::size_t index)
      : in_(in), spec_(s), out_(infer_shape(s, in, index)),
        weight_("layer" + std::to_string(index) + ".weight", Tensor<T>({s.out, in[0], s.kernel_h, s.kernel_w})),
        bias_("layer" + std::to_string(index) + ".bias", Tensor<T>({s.out})) {}

  void init(CounterRng& rng, bool he) {
    const double fan_in = static_cast<double>(in_[0] * spec_.kernel_h * spec_.kernel_w);
    const double fan_out = static_cast<double>(spec_.out * spec_.kernel_h * spec_.kernel_w);
    detail::init_uniform(weight_.value, he ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out)), rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    detail::check_input(x.shape(), in_, "conv");
    const std::size_t n = x.dim(0);
    const std::size_t rows = patch_rows(), cols = out_[1] * out_[2];
    cols_.assign(n * rows * cols, T(0));
    Tensor<T> y(detail::with_batch(n, out_));
    for (std::size_t b = 0; b < n; ++b) {
      T* col = cols_.data() + b * rows * cols;
      im2col(x.data() + b * volume(in_), col);
      T* yb = y.data() + b * volume(out_);
      for (std::size_t f = 0; f < out_[0]; ++f) std::fill(yb + f * cols, yb + (f + 1) * cols, bias_.value[f]);
      gemm::nn(out_[0], cols, rows, weight_.value.data(), col, yb);
    }
    batch_ = n;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, bool need_dx = true) override {
    detail::check_input(gy.shape(), out_, "conv backward");
    const std::size_t rows = patch_rows(), cols = out_[1] * out_[2];
    Tensor<T> dx(need_dx ? detail::with_batch(batch_, in_) : Shape{0});
    std::vector<T> dcol(need_dx ? rows * cols : 0);
    for (std::size_t b = 0; b < batch_; ++b) {
      const T* g = gy.data() + b * volume(out_);
      const T* col = cols_.data() + b * rows * cols;
      gemm::nt(out_[0], rows, cols, g, col, weight_.grad.data());
      for (std::size_t f = 0; f < out_[0]; ++f) {
        T s = T(0);
        for (std::size_t p = 0; p < cols; ++p) s += g[f * cols + p];
        bias_.grad[f] += s;
      }
      if (!need_dx) continue;
      std::fill(dcol.begin(), dcol.end(), T(0));
      gemm::tn(rows, cols, out_[0], weight_.value.data(), g, dcol.data());
      col2im(dcol.data(), dx.data() + b * volume(in_));
    }
    return dx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  [[nodiscard]] std::size_t patch_rows() const { return in_[0] * spec_.kernel_h * spec_.kernel_w; }

  // col[(c, ky, kx), (oy, ox)] = x[c, oy*s + ky - p, ox*s + kx - p], zero outside.
  void im2col(const T* x, T* col) const {
    const std::size_t h = in_[1], w = in_[2], oh = out_[1], ow = out_[2];
    std::size_t r = 0;
    for (std::size_t c = 0; c < in_[0]; ++c)
      for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx, ++r) {
          T* dst = col + r * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * spec_.stride + ky) - static_cast<std::ptrdiff_t>(spec_.padding);
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * spec_.stride + kx) - static_cast<std::ptrdiff_t>(spec_.padding);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix < static_cast<std::ptrdiff_t>(w);
              dst[oy * ow + ox] = inside ? x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : T(0);
            }
          }
        }
  }

  void col2im(const T* col, T* dx) const {
    const std::size_t h = in_[1], w = in_[2], oh = out_[1], ow = out_[2];
    std::size_t r = 0;
    for (std::size_t c = 0; c < in_[0]; ++c)
      for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx, ++r) {
          const T* src = col + r * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * spec_.stride + ky) - static_cast<std::ptrdiff_t>(spec_.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * spec_.stride + kx) - static_cast<std::ptrdiff_t>(spec_.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              dx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += src[oy * ow + ox];
            }
          }
        }
  }

  Shape in_;
  LayerSpec spec_;
  Shape out_;
  Param<T> weight_;
  Param<T> bias_;
  std::vector<T> cols_;
  std::size_t batch_ = 0;
};

/// Max over windows; ties go to the first element in row-major order.
template <class T>
class MaxPool final : public Layer<T> {
 public:
  MaxPool(const Shape& in, const LayerSpec& s, std::size_t index) : in_(in), spec_(s), out_(infer_shape(s, in, index)) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    detail::check_input(x.shape(), in_, "maxpool");
    const std::size_t n = x.dim(0), h = in_[1], w = in_[2], oh = out_[1], ow = out_[2];
    Tensor<T> y(detail::with_batch(n, out_));
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < in_[0]; ++c) {
        const std::size_t plane = (b * in_[0] + c) * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
            std::size_t best = plane + oy * spec_.stride * w + ox * spec_.stride;
            for (std::size_t ky = 0; ky < spec_.window; ++ky)
              for (std::size_t kx = 0; kx < spec_.window; ++kx) {
                const std::size_t idx = plane + (oy * spec_.stride + ky) * w + ox * spec_.stride + kx;
                if (x[idx] > x[best]) best = idx;
              }
            y[o] = x[best];
            argmax_[o] = best;
          }
      }
    batch_ = n;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, bool need_dx = true) override {
    detail::check_input(gy.shape(), out_, "maxpool backward");
    Tensor<T> dx(detail::with_batch(batch_, in_));
    for (std::size_t o = 0; o < gy.size(); ++o) dx[argmax_[o]] += gy[o];
    return dx;
  }

 private:
  Shape in_;
  LayerSpec spec_;
  Shape out_;
  std::vector<std::size_t> argmax_;
  std::size_t batch_ = 0;
};

/// y = x W + b with W stored [in, out].
template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(const Shape& in, const LayerSpec& s, std::size_t index)
      : in_dim_(checked_input_width(in, s, index)), out_dim_(s.out),
        weight_("layer" + std::to_string(index) + ".weight", Tensor<T>({in_dim_, out_dim_})),
        bias_("layer" + std::to_string(index) + ".bias", Tensor<T>({out_dim_})) {}

  void init(CounterRng& rng, bool he) {
    const double fi = static_cast<double>(in_dim_), fo = static_cast<double>(out_dim_);
    detail::init_uniform(weight_.value, he ? std::sqrt(6.0 / fi) : std::sqrt(6.0 / (fi + fo)), rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    detail::check_input(x.shape(), {in_dim_}, "dense");
    const std::size_t n = x.dim(0);
    input_ = x;
    Tensor<T> y({n, out_dim_});
    for (std::size_t b = 0; b < n; ++b) std::copy(bias_.value.data(), bias_.value.data() + out_dim_, y.data() + b * out_dim_);
    gemm::nn(n, out_dim_, in_dim_, x.data(), weight_.value.data(), y.data());
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, bool need_dx = true) override {
    detail::check_input(gy.shape(), {out_dim_}, "dense backward");
    const std::size_t n = gy.dim(0);
    gemm::tn(in_dim_, out_dim_, n, input_.data(), gy.data(), weight_.grad.data());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < out_dim_; ++j) bias_.grad[j] += gy[b * out_dim_ + j];
    if (!need_dx) return {};
    Tensor<T> dx({n, in_dim_});
    gemm::nt(n, in_dim_, out_dim_, gy.data(), weight_.value.data(), dx.data());
    return dx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  static std::size_t checked_input_width(const Shape& in, const LayerSpec& s, std::size_t index) {
    infer_shape(s, in, index);
    return in[0];
  }

  std::size_t in_dim_;
  std::size_t out_dim_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

template <class T>
class Relu final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T(0) ? v : T(0);
    output_ = y;
    return y;
  }
  // Subgradient 0 at 0.
  Tensor<T> backward(const Tensor<T>& gy, bool need_dx = true) override {
    Tensor<T> dx = gy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(output_[i] > T(0))) dx[i] = T(0);
    return dx;
  }

 private:
  Tensor<T> output_;
};

template <class T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
class Sigmoid final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y = x;
    for (auto& v : y.values()) v = sigmoid(v);
    output_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy, bool need_dx = true) override {
    Tensor<T> dx = gy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (T(1) - output_[i]);
    return dx;
  }

 private:
  Tensor<T> output_;
};

template <class T>
class Flatten final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }
  Tensor<T> backward(const Tensor<T>& gy, bool need_dx = true) override { return gy.reshaped(in_shape_); }

 private:
  Shape in_shape_;
};

}  // namespace trajscope::nn
