#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajscope/cnn.hpp"
#include "trajscope/errors.hpp"
#include "trajscope/io.hpp"
#include "trajscope/labels.hpp"
#include "trajscope/raster.hpp"
#include "trajscope/trajectory.hpp"
#include "trajscope/vae.hpp"

namespace trajscope {

enum class Flag { normal, known_anomaly, unknown_anomaly };

inline std::string to_string(Flag f) {
  switch (f) {
    case Flag::normal: return "normal";
    case Flag::known_anomaly: return "known_anomaly";
    case Flag::unknown_anomaly: return "unknown_anomaly";
  }
  return "normal";
}

inline Flag flag_from_string(const std::string& s) {
  if (s == "normal") return Flag::normal;
  if (s == "known_anomaly") return Flag::known_anomaly;
  if (s == "unknown_anomaly") return Flag::unknown_anomaly;
  throw ValidationError("unknown flag '" + s + "'");
}

/// A traffic phase and the classes allowed to move during it.
struct SignalContext {
  std::string signal = "default";
  std::vector<ClassLabel> allowed;

  [[nodiscard]] bool allows(const ClassLabel& c) const {
    return std::find(allowed.begin(), allowed.end(), c) != allowed.end();
  }

  void validate(const ClassCatalog& catalog) const {
    if (allowed.empty()) throw ValidationError("signal '" + signal + "' allows no classes");
    for (const auto& c : allowed) {
      if (!catalog.index_of(c)) {
        throw ValidationError("signal '" + signal + "' allows unknown class '" + to_string(c) + "'");
      }
    }
  }

  /// Context that allows every class in the catalog.
  static SignalContext all_of(const ClassCatalog& catalog, std::string signal = "default") {
    return {std::move(signal), catalog.classes()};
  }
};

struct FlagDecision {
  Flag flag = Flag::normal;
  /// Loss also exceeded the threshold while the class check already failed.
  bool secondary_unknown = false;

  friend bool operator==(const FlagDecision&, const FlagDecision&) = default;
};

/// Anomalous when the class is not allowed or the loss exceeds delta; a disallowed class wins.
inline FlagDecision decide_flag(bool class_allowed, double loss, double delta) {
  const bool over = loss > delta;
  if (!class_allowed) return {Flag::known_anomaly, over};
  return {over ? Flag::unknown_anomaly : Flag::normal, false};
}

struct Verdict {
  std::string id;
  ClassLabel predicted = std::int64_t{0};
  double confidence = 0.0;
  double loss = 0.0;
  double delta = 0.0;
  Flag flag = Flag::normal;
  bool secondary_unknown = false;

  [[nodiscard]] bool anomalous() const { return flag != Flag::normal; }
};

/**
 * Classifies and scores prepared images, then applies the flag rule. Verdict
 * ids are the image ids; scores use the per-id noise streams of
 * Vae::reconstruction_loss.
 */
template <class T>
std::vector<Verdict> detect_images(std::span<const GradientImage* const> images, CnnClassifier<T>& cnn, Vae<T>& vae,
                                   const ClassCatalog& catalog, const SignalContext& context, double delta,
                                   std::size_t samples = 8, std::uint64_t seed = 1) {
  if (!(delta > 0.0)) throw ValidationError("threshold must be positive");
  if (catalog.size() != cnn.num_classes()) {
    throw ValidationError("class catalog has " + std::to_string(catalog.size()) + " classes, CNN has " +
                          std::to_string(cnn.num_classes()));
  }
  for (const auto* img : images) {
    if (img->width != cnn.resolution() || img->height != cnn.resolution()) {
      throw ValidationError("image " + img->id + " is " + std::to_string(img->width) + "x" +
                            std::to_string(img->height) + ", CNN expects " + std::to_string(cnn.resolution()));
    }
    if (img->width != vae.dims().width || img->height != vae.dims().height) {
      throw ValidationError("image " + img->id + " does not match the VAE input size");
    }
  }
  context.validate(catalog);
  const auto post = cnn.classify(images);
  const auto losses = vae.reconstruction_loss(images, samples, seed);
  std::vector<Verdict> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Verdict v;
    v.id = images[i]->id;
    v.predicted = catalog.classes()[post[i].cls];
    v.confidence = post[i].confidence;
    v.loss = losses[i];
    v.delta = delta;
    const auto d = decide_flag(context.allows(v.predicted), v.loss, delta);
    v.flag = d.flag;
    v.secondary_unknown = d.secondary_unknown;
    out.push_back(std::move(v));
  }
  return out;
}

/// Rasterizes each trajectory and runs detect_images.
template <class T>
std::vector<Verdict> detect(std::span<const Trajectory> trajectories, CnnClassifier<T>& cnn, Vae<T>& vae,
                            const ClassCatalog& catalog, const SignalContext& context, double delta,
                            const RasterConfig& raster, std::size_t samples = 8, std::uint64_t seed = 1) {
  if (raster.width != cnn.resolution() || raster.height != cnn.resolution()) {
    throw ValidationError("raster is " + std::to_string(raster.width) + "x" + std::to_string(raster.height) +
                          ", CNN expects " + std::to_string(cnn.resolution()));
  }
  if (raster.width != vae.dims().width || raster.height != vae.dims().height) {
    throw ValidationError("raster size does not match the VAE input size");
  }
  std::vector<GradientImage> images;
  images.reserve(trajectories.size());
  for (const auto& t : trajectories) images.push_back(rasterize(t, raster));
  std::vector<const GradientImage*> ptrs;
  for (const auto& i : images) ptrs.push_back(&i);
  return detect_images<T>(ptrs, cnn, vae, catalog, context, delta, samples, seed);
}

template <class T>
Verdict detect(const Trajectory& trajectory, CnnClassifier<T>& cnn, Vae<T>& vae, const ClassCatalog& catalog,
               const SignalContext& context, double delta, const RasterConfig& raster, std::size_t samples = 8,
               std::uint64_t seed = 1) {
  return detect(std::span<const Trajectory>(&trajectory, 1), cnn, vae, catalog, context, delta, raster, samples, seed)
      .front();
}

/// Score export: `id,loss,delta,flag`.
inline std::string verdicts_to_csv(const std::vector<Verdict>& verdicts) {
  std::ostringstream out;
  out << "id,loss,delta,flag\n";
  for (const auto& v : verdicts)
    out << v.id << ',' << format_double(v.loss) << ',' << format_double(v.delta) << ',' << to_string(v.flag) << '\n';
  return out.str();
}

inline nlohmann::json verdicts_to_json(const std::vector<Verdict>& verdicts) {
  auto j = nlohmann::json::array();
  for (const auto& v : verdicts) {
    j.push_back({{"id", v.id},
                 {"predicted", to_json_value(v.predicted)},
                 {"confidence", v.confidence},
                 {"loss", v.loss},
                 {"delta", v.delta},
                 {"flag", to_string(v.flag)},
                 {"secondary_unknown", v.secondary_unknown}});
  }
  return j;
}

inline std::vector<Verdict> verdicts_from_json(const nlohmann::json& j) {
  std::vector<Verdict> out;
  for (const auto& e : j) {
    Verdict v;
    v.id = e.at("id").get<std::string>();
    v.predicted = class_label_from_json(e.at("predicted"));
    v.confidence = e.at("confidence").get<double>();
    v.loss = e.at("loss").get<double>();
    v.delta = e.at("delta").get<double>();
    v.flag = flag_from_string(e.at("flag").get<std::string>());
    v.secondary_unknown = e.value("secondary_unknown", false);
    out.push_back(std::move(v));
  }
  return out;
}

/// Binary anomaly counts; positive = anomalous.
struct AnomalyCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }
  [[nodiscard]] double accuracy() const { return ratio(tp + tn, total()); }
  [[nodiscard]] double precision() const { return ratio(tp, tp + fp); }
  [[nodiscard]] double recall() const { return ratio(tp, tp + fn); }

 private:
  // NaN when the denominator is empty.
  static double ratio(std::size_t a, std::size_t b) {
    return b == 0 ? std::nan("") : static_cast<double>(a) / static_cast<double>(b);
  }
};

/// Table-style summary: duration, trajectory, cluster, class and anomaly counts.
struct DatasetSummary {
  double duration = 0.0;  // span of trajectory time stamps, input time units
  std::size_t trajectories = 0;
  std::optional<std::size_t> clusters;
  std::size_t classes = 0;
  std::size_t anomalies = 0;
};

struct EvalReport {
  std::vector<ClassLabel> classes;
  /// Rows are true classes, columns predicted classes; normal trajectories only.
  std::vector<std::vector<std::size_t>> confusion;
  AnomalyCounts anomaly;
  DatasetSummary summary;

  [[nodiscard]] double classification_accuracy() const {
    std::size_t hit = 0, all = 0;
    for (std::size_t i = 0; i < confusion.size(); ++i)
      for (std::size_t j = 0; j < confusion[i].size(); ++j) {
        all += confusion[i][j];
        if (i == j) hit += confusion[i][j];
      }
    return all == 0 ? std::nan("") : static_cast<double>(hit) / static_cast<double>(all);
  }
};

inline nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.classes) classes.push_back(to_json_value(c));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.confusion) rows.push_back(row);
  nlohmann::json summary{{"T", r.summary.duration},
                         {"N", r.summary.trajectories},
                         {"K", r.summary.clusters ? nlohmann::json(*r.summary.clusters) : nlohmann::json(nullptr)},
                         {"C", r.summary.classes},
                         {"N_A", r.summary.anomalies}};
  return {{"classes", classes},
          {"confusion", rows},
          {"classification_accuracy", number_or_null(r.classification_accuracy())},
          {"anomaly",
           {{"tp", r.anomaly.tp},
            {"fp", r.anomaly.fp},
            {"tn", r.anomaly.tn},
            {"fn", r.anomaly.fn},
            {"accuracy", number_or_null(r.anomaly.accuracy())},
            {"precision", number_or_null(r.anomaly.precision())},
            {"recall", number_or_null(r.anomaly.recall())}}},
          {"summary", summary}};
}

/**
 * Scores verdicts against ground truth. The anomaly task is binary (either
 * flag counts as positive); the confusion matrix covers trajectories whose
 * truth is a normal class.
 */
inline EvalReport evaluate(const std::vector<Verdict>& verdicts, const std::map<std::string, ClassLabel>& truth,
                           const ClassCatalog& catalog, DatasetSummary summary = {}) {
  EvalReport r;
  r.classes = catalog.classes();
  r.confusion.assign(catalog.size(), std::vector<std::size_t>(catalog.size(), 0));
  r.summary = summary;
  for (const auto& v : verdicts) {
    const auto it = truth.find(v.id);
    if (it == truth.end()) throw ValidationError("verdict for '" + v.id + "' has no ground-truth label");
    const bool positive = is_anomaly_label(it->second);
    if (positive) {
      ++(v.anomalous() ? r.anomaly.tp : r.anomaly.fn);
      continue;
    }
    ++(v.anomalous() ? r.anomaly.fp : r.anomaly.tn);
    const auto t = catalog.index_of(it->second);
    const auto p = catalog.index_of(v.predicted);
    if (!t) throw ValidationError("ground truth of '" + v.id + "' is class '" + to_string(it->second) + "', not in the catalog");
    if (!p) throw ValidationError("verdict for '" + v.id + "' predicts an unknown class");
    ++r.confusion[static_cast<std::size_t>(*t)][static_cast<std::size_t>(*p)];
  }
  return r;
}

/// Duration, trajectory count and anomaly count of a labelled corpus.
inline DatasetSummary summarize(std::span<const Trajectory> trajectories, const std::map<std::string, ClassLabel>& labels,
                                std::optional<std::size_t> clusters = std::nullopt) {
  DatasetSummary s;
  s.trajectories = trajectories.size();
  s.clusters = clusters;
  if (!trajectories.empty()) {
    double lo = trajectories.front().start_time(), hi = trajectories.front().end_time();
    for (const auto& t : trajectories) {
      lo = std::min(lo, t.start_time());
      hi = std::max(hi, t.end_time());
    }
    s.duration = hi - lo;
  }
  std::vector<ClassLabel> all;
  for (const auto& t : trajectories) {
    const auto it = labels.find(t.id());
    if (it == labels.end()) continue;
    all.push_back(it->second);
    s.anomalies += is_anomaly_label(it->second);
  }
  s.classes = ClassCatalog(all).size();
  return s;
}

}  // namespace trajscope
