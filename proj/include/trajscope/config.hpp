#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"
#include "trajscope/files.hpp"
#include "trajscope/io.hpp"

/*
 * Pipeline configuration.
 *
 * Grammar, one setting per line:
 *
 *   # comment
 *   key = value
 *
 * Blank lines and lines whose first non-blank character is '#' are ignored.
 * Keys are lower-case identifiers from the table below; values run to the end
 * of the line with surrounding blanks trimmed. Unknown and repeated keys are
 * errors. An empty value is allowed only for optional keys.
 */

namespace trajscope {

enum class ValueKind { count, positive_count, real, positive_real, fraction, choice, text, optional_text,
                       optional_positive_real, boolean };

struct ConfigKey {
  std::string key;
  std::string fallback;
  ValueKind kind;
  std::vector<std::string> choices;  // ValueKind::choice only
  /// Stages whose output depends on this key. Used for parameter hashes.
  std::vector<std::string> stages;
  std::string help;
};

inline const std::vector<ConfigKey>& config_keys() {
  using K = ValueKind;
  const std::vector<std::string> models = {"synth", "cluster", "train-cnn", "train-vae", "embed", "refine", "detect"};
  static const std::vector<ConfigKey> keys = {
      {"seed", "1", K::count, {}, models, "root seed for every random stream"},
      {"precision", "float", K::choice, {"float", "double"}, {"train-cnn", "train-vae", "embed", "refine", "detect"},
       "network arithmetic; double for cross-machine reproducibility checks"},

      {"scene", "junction", K::choice, {"junction", "lanes"}, {"synth"}, "synthetic scene layout"},
      {"classes", "8", K::positive_count, {}, {"synth"}, "normal classes (junction: at most 8)"},
      {"per_class", "35", K::positive_count, {}, {"synth"}, "normal trajectories per class"},
      {"class_counts", "", K::optional_text, {}, {"synth"}, "comma list, one count per class; overrides per_class"},
      {"train_fraction", "0.75", K::fraction, {}, {"synth"}, "share of normal trajectories in the training split"},
      {"lateral_sigma", "", K::optional_positive_real, {}, {"synth"}, "override per-trajectory lateral spread"},
      {"anomalies_truncation", "8", K::count, {}, {"synth"}, ""},
      {"anomalies_speed", "8", K::count, {}, {"synth"}, ""},
      {"anomalies_opposite", "8", K::count, {}, {"synth"}, ""},
      {"anomalies_lane_change", "7", K::count, {}, {"synth"}, ""},
      {"input", "", K::optional_text, {}, {"synth"}, "trajectory file to ingest instead of synthesizing"},
      {"input_format", "csv", K::choice, {"csv", "jsonl"}, {"synth"}, ""},
      {"frame_rate", "", K::optional_positive_real, {}, {"synth"}, "input timestamps are frame indices at this rate"},
      {"truth", "", K::optional_text, {}, {"synth"}, "JSON object id -> class for ingested data"},

      {"beta", "5", K::real, {}, {"cluster"}, "mDPMM concentration radius"},
      {"k_max", "0", K::count, {}, {"cluster"}, "truncation level, 0 = min(N, 200)"},
      {"sweeps", "100", K::positive_count, {}, {"cluster"}, ""},
      {"min_cluster_size", "5", K::positive_count, {}, {"cluster"}, "smaller clusters are reported as rare"},

      {"annotate_mode", "auto", K::choice, {"auto", "file", "serve"}, {"annotate"}, ""},
      {"labels_file", "", K::optional_text, {}, {"annotate"}, "labels for annotate_mode = file"},

      {"resolution", "64", K::positive_count, {}, {"rasterize"}, "square image side in pixels"},
      {"thickness", "3", K::positive_count, {}, {"rasterize"}, ""},
      {"hue_span", "180", K::positive_real, {}, {"rasterize"}, ""},
      {"hue_unit", "half_degrees", K::choice, {"half_degrees", "degrees"}, {"rasterize"}, ""},
      {"color_mode", "gradient", K::choice, {"gradient", "monochrome"}, {"rasterize"}, ""},
      {"margin", "2", K::count, {}, {"rasterize"}, ""},
      {"bounds", "auto", K::text, {}, {"rasterize"}, "auto (scene), fit (per trajectory) or x0,y0,x1,y1"},

      {"cnn_epochs", "20", K::positive_count, {}, {"train-cnn"}, ""},
      {"cnn_batch", "20", K::positive_count, {}, {"train-cnn"}, ""},
      {"cnn_lr", "0.001", K::positive_real, {}, {"train-cnn"}, ""},

      {"vae_epochs", "200", K::positive_count, {}, {"train-vae", "refine"}, ""},
      {"vae_batch", "20", K::positive_count, {}, {"train-vae", "refine"}, ""},
      {"vae_lr", "0.0005", K::positive_real, {}, {"train-vae", "refine"}, ""},
      {"vae_hidden", "512", K::positive_count, {}, {"train-vae", "refine"}, ""},
      {"vae_latent", "32", K::positive_count, {}, {"train-vae", "refine"}, ""},

      {"tsne_perplexity", "30", K::positive_real, {}, {"embed"}, ""},
      {"tsne_iterations", "1000", K::positive_count, {}, {"embed"}, ""},
      {"outlier_k_sigma", "3", K::positive_real, {}, {"embed"}, ""},
      {"refine_suggested", "false", K::boolean, {}, {"refine"}, "also drop t-SNE suggested outliers"},

      {"threshold_factor", "2", K::positive_real, {}, {"threshold"}, "delta = factor * mean training loss"},

      {"score_samples", "8", K::positive_count, {}, {"detect"}, "Monte Carlo samples per reconstruction score"},
      {"signal", "default", K::text, {}, {"detect"}, "signal context name"},
      {"allowed_classes", "", K::optional_text, {}, {"detect"}, "comma list; empty allows every class"},

      {"http_host", "127.0.0.1", K::text, {}, {}, "annotation service address"},
      {"http_port", "8080", K::count, {}, {}, ""},
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

namespace detail {

inline bool parse_real(std::string_view s, double& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_count(std::string_view s, std::uint64_t& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline void check_value(const ConfigKey& k, const std::string& v) {
  auto fail = [&](const std::string& what) { throw ValidationError(k.key + " = '" + v + "': " + what); };
  std::uint64_t n = 0;
  double x = 0.0;
  switch (k.kind) {
    case ValueKind::count:
      if (!parse_count(v, n)) fail("expected a non-negative integer");
      break;
    case ValueKind::positive_count:
      if (!parse_count(v, n) || n == 0) fail("expected a positive integer");
      break;
    case ValueKind::real:
      if (!parse_real(v, x)) fail("expected a number");
      break;
    case ValueKind::positive_real:
      if (!parse_real(v, x) || !(x > 0.0)) fail("expected a positive number");
      break;
    case ValueKind::fraction:
      if (!parse_real(v, x) || !(x > 0.0 && x < 1.0)) fail("expected a number in (0, 1)");
      break;
    case ValueKind::choice:
      if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
        std::string all;
        for (const auto& c : k.choices) all += (all.empty() ? "" : "|") + c;
        fail("expected one of " + all);
      }
      break;
    case ValueKind::text:
      if (v.empty()) fail("value required");
      break;
    case ValueKind::optional_text:
      break;
    case ValueKind::optional_positive_real:
      if (!v.empty() && (!parse_real(v, x) || !(x > 0.0))) fail("expected a positive number or nothing");
      break;
    case ValueKind::boolean:
      if (v != "true" && v != "false") fail("expected true or false");
      break;
  }
}

}  // namespace detail

class Config {
 public:
  Config() {
    for (const auto& k : config_keys()) values_[k.key] = k.fallback;
  }

  static Config parse(std::string_view text, const std::string& source = "config") {
    Config c;
    std::map<std::string, std::size_t> seen;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      const auto where = source + ":" + std::to_string(line_no) + ": ";
      const auto body = detail::trim(line);
      if (body.empty() || body.front() == '#') continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) throw ValidationError(where + "expected 'key = value'");
      const std::string key(detail::trim(body.substr(0, eq)));
      const std::string value(detail::trim(body.substr(eq + 1)));
      const auto* spec = find_config_key(key);
      if (spec == nullptr) throw ValidationError(where + "unknown key '" + key + "'");
      if (auto it = seen.find(key); it != seen.end()) {
        throw ValidationError(where + "'" + key + "' already set on line " + std::to_string(it->second));
      }
      seen[key] = line_no;
      try {
        c.set(key, value);
      } catch (const ValidationError& e) {
        throw ValidationError(where + e.what());
      }
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) { return parse(read_file_text(path), path.string()); }

  void set(const std::string& key, const std::string& value) {
    const auto* spec = find_config_key(key);
    if (spec == nullptr) throw ValidationError("unknown key '" + key + "'");
    detail::check_value(*spec, value);
    values_[key] = value;
  }

  [[nodiscard]] const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown key '" + key + "'");
    return it->second;
  }

  [[nodiscard]] std::uint64_t count(const std::string& key) const {
    std::uint64_t n = 0;
    detail::parse_count(get(key), n);
    return n;
  }

  [[nodiscard]] double real(const std::string& key) const {
    double x = 0.0;
    if (!detail::parse_real(get(key), x)) throw ValidationError(key + " is not a number");
    return x;
  }

  [[nodiscard]] bool flag(const std::string& key) const { return get(key) == "true"; }

  [[nodiscard]] std::optional<double> optional_real(const std::string& key) const {
    if (get(key).empty()) return std::nullopt;
    return real(key);
  }

  /// Values of every key the stage depends on, as written.
  [[nodiscard]] nlohmann::json params(const std::string& stage) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_keys()) {
      if (std::find(k.stages.begin(), k.stages.end(), stage) != k.stages.end()) j[k.key] = values_.at(k.key);
    }
    return j;
  }

  /// Effective configuration in the file grammar, keys in table order.
  [[nodiscard]] std::string to_text() const {
    std::string out;
    for (const auto& k : config_keys()) out += k.key + " = " + values_.at(k.key) + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace trajscope
