#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"
#include "trajscope/files.hpp"
#include "trajscope/nn/adam.hpp"
#include "trajscope/nn/tensor.hpp"

// File layout: "TSCP", u32 version, u64 header length, JSON header, then the
// raw little-endian buffers of every tensor listed in header["tensors"], in
// that order. The header records dtype, tensor names and shapes plus any
// caller-supplied fields (network spec, training step, model dims).

namespace trajscope::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'T', 'S', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "float32" : "float64";
}

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
struct Checkpoint {
  nlohmann::json header;
  std::vector<NamedTensor<T>> tensors;

  [[nodiscard]] const Tensor<T>& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.tensor;
    throw ValidationError("checkpoint has no tensor '" + name + "'");
  }
  [[nodiscard]] bool contains(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
};

template <class T>
std::vector<std::uint8_t> encode_checkpoint(nlohmann::json header, const std::vector<NamedTensor<T>>& tensors) {
  header["dtype"] = dtype_name<T>();
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  auto put = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  put(&version, sizeof version);
  put(&len, sizeof len);
  put(text.data(), text.size());
  for (const auto& t : tensors) put(t.tensor.data(), t.tensor.size() * sizeof(T));
  return out;
}

namespace detail {

template <class From, class T>
Tensor<T> read_buffer(const std::uint8_t* p, Shape shape) {
  std::vector<From> raw(volume(shape));
  std::memcpy(raw.data(), p, raw.size() * sizeof(From));
  return Tensor<T>(std::move(shape), std::vector<T>(raw.begin(), raw.end()));
}

}  // namespace detail

/// Decodes a checkpoint, converting stored values to T if the dtype differs.
template <class T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ValidationError(what + " is not a TSCP checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&len, bytes.data() + 8, 8);
  if (version != kCheckpointVersion) {
    throw ValidationError(what + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (len > bytes.size() - 16) throw ValidationError(what + ": truncated header");
  Checkpoint<T> ck;
  try {
    ck.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(what + ": corrupt header: " + e.what());
  }
  const auto dtype = ck.header.at("dtype").template get<std::string>();
  const std::size_t width = dtype == "float32" ? 4 : dtype == "float64" ? 8 : 0;
  if (width == 0) throw ValidationError(what + ": unknown dtype '" + dtype + "'");
  std::size_t pos = 16 + len;
  for (const auto& entry : ck.header.at("tensors")) {
    Shape shape = entry.at("shape").template get<Shape>();
    const std::size_t n = volume(shape) * width;
    if (pos + n > bytes.size()) throw ValidationError(what + ": truncated tensor data");
    Tensor<T> t = width == 4 ? detail::read_buffer<float, T>(bytes.data() + pos, std::move(shape))
                             : detail::read_buffer<double, T>(bytes.data() + pos, std::move(shape));
    ck.tensors.push_back({entry.at("name").template get<std::string>(), std::move(t)});
    pos += n;
  }
  if (pos != bytes.size()) throw ValidationError(what + ": trailing bytes after tensor data");
  return ck;
}

/// Parameters (and Adam moments when an optimizer is given) in declaration order.
template <class T>
std::vector<NamedTensor<T>> collect_tensors(const std::vector<Param<T>*>& params, Adam<T>* adam = nullptr) {
  std::vector<NamedTensor<T>> out;
  for (const auto* p : params) out.push_back({p->name, p->value});
  if (adam) {
    for (std::size_t i = 0; i < params.size(); ++i) out.push_back({params[i]->name + ".adam_m", adam->first_moments()[i]});
    for (std::size_t i = 0; i < params.size(); ++i) out.push_back({params[i]->name + ".adam_v", adam->second_moments()[i]});
  }
  return out;
}

template <class T>
void restore_tensors(const Checkpoint<T>& ck, const std::vector<Param<T>*>& params, Adam<T>* adam = nullptr) {
  for (auto* p : params) {
    const auto& t = ck.at(p->name);
    if (t.shape() != p->value.shape()) {
      throw ValidationError("checkpoint tensor '" + p->name + "' has shape " + shape_string(t.shape()) + ", expected " +
                            shape_string(p->value.shape()));
    }
    p->value = t;
  }
  if (adam && ck.contains(params.front()->name + ".adam_m")) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam->first_moments()[i] = ck.at(params[i]->name + ".adam_m");
      adam->second_moments()[i] = ck.at(params[i]->name + ".adam_v");
    }
    adam->set_steps(ck.header.value("step", std::uint64_t{0}));
  }
}

}  // namespace trajscope::nn
