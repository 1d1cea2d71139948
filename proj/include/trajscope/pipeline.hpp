#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajscope/cnn.hpp"
#include "trajscope/config.hpp"
#include "trajscope/detect.hpp"
#include "trajscope/errors.hpp"
#include "trajscope/files.hpp"
#include "trajscope/io.hpp"
#include "trajscope/labels.hpp"
#include "trajscope/mdpmm.hpp"
#include "trajscope/png.hpp"
#include "trajscope/raster.hpp"
#include "trajscope/synth.hpp"
#include "trajscope/tsne.hpp"
#include "trajscope/vae.hpp"

/*
 * Run directory layout. Every file is written atomically; manifest.json
 * records, per stage, the settings it ran with and the SHA-256 of every
 * input it read and output it wrote.
 *
 *   synth      trajectories.csv truth.json split.json scene.json
 *   cluster    clusters.json
 *   annotate   annotation.json labels.json
 *   rasterize  images.json images/<name>.png
 *   train-cnn  cnn.ckpt classes.json cnn_history.json
 *   train-vae  vae.ckpt vae_history.json vae_losses.json
 *   embed      embedding.json embedding_meta.json
 *   refine     vae_refined.ckpt vae_refined_history.json vae_refined_losses.json refine.json
 *   threshold  threshold.json
 *   detect     verdicts.csv verdicts.json
 *   eval       eval_report.json
 *
 * exclusions.json is written by the annotation service and read by refine.
 */

namespace trajscope {

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"synth",     "cluster",   "annotate", "rasterize",
                                                 "train-cnn", "train-vae", "embed",    "refine",
                                                 "threshold", "detect",    "eval"};
  return names;
}

inline const std::vector<std::string>& stage_outputs(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> outputs = {
      {"synth", {"trajectories.csv", "truth.json", "split.json", "scene.json"}},
      {"cluster", {"clusters.json"}},
      {"annotate", {"annotation.json", "labels.json"}},
      {"rasterize", {"images.json"}},
      {"train-cnn", {"cnn.ckpt", "classes.json", "cnn_history.json"}},
      {"train-vae", {"vae.ckpt", "vae_history.json", "vae_losses.json"}},
      {"embed", {"embedding.json", "embedding_meta.json"}},
      {"refine", {"vae_refined.ckpt", "vae_refined_history.json", "vae_refined_losses.json", "refine.json"}},
      {"threshold", {"threshold.json"}},
      {"detect", {"verdicts.csv", "verdicts.json"}},
      {"eval", {"eval_report.json"}},
  };
  auto it = outputs.find(stage);
  if (it == outputs.end()) throw ValidationError("unknown stage '" + stage + "'");
  return it->second;
}

/// Stage that writes a run-directory file, or empty for files written elsewhere.
inline std::string producer_of(const std::string& file) {
  for (const auto& s : stage_names()) {
    const auto& outs = stage_outputs(s);
    if (std::find(outs.begin(), outs.end(), file) != outs.end()) return s;
  }
  return {};
}

inline constexpr const char* kExclusionsFile = "exclusions.json";
inline constexpr const char* kAbsent = "absent";

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  const auto text = read_file_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline std::string sha256_or_absent(const std::filesystem::path& path) {
  return std::filesystem::exists(path) ? sha256_file(path) : std::string(kAbsent);
}

/// Parses "3" as an integer class and anything else as a named class.
inline ClassLabel parse_class_label(std::string_view text) {
  const auto s = detail::trim(text);
  if (s.empty()) throw ValidationError("class label must not be empty");
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec == std::errc() && res.ptr == s.data() + s.size()) return v;
  return std::string(s);
}

// ---------------------------------------------------------------------------
// Manifest

class Manifest {
 public:
  explicit Manifest(std::filesystem::path run_dir) : path_(std::move(run_dir) / "manifest.json") {
    if (std::filesystem::exists(path_)) {
      j_ = read_json(path_);
      if (!j_.is_object() || !j_.contains("stages")) throw ValidationError(path_.string() + " is not a manifest");
    } else {
      j_ = {{"version", 1}, {"stages", nlohmann::json::object()}};
    }
  }

  [[nodiscard]] bool has(const std::string& stage) const { return j_["stages"].contains(stage); }
  [[nodiscard]] const nlohmann::json& entry(const std::string& stage) const { return j_["stages"].at(stage); }
  void put(const std::string& stage, nlohmann::json e) { j_["stages"][stage] = std::move(e); }
  void save() const { write_json(path_, j_); }
  [[nodiscard]] const nlohmann::json& json() const { return j_; }

 private:
  std::filesystem::path path_;
  nlohmann::json j_;
};

// ---------------------------------------------------------------------------
// Annotation state shared by the annotate stage and the annotation service.

/**
 * Class assignments made by the annotator. A trajectory takes its own
 * assignment if it has one, else its cluster's. Unassigned trajectories are
 * left out of labels.json.
 */
struct Annotation {
  std::uint64_t version = 0;
  std::map<std::size_t, ClassLabel> clusters;
  std::map<std::string, ClassLabel> trajectories;
  std::set<std::string> excluded;

  friend bool operator==(const Annotation& a, const Annotation& b) {
    return a.clusters == b.clusters && a.trajectories == b.trajectories && a.excluded == b.excluded;
  }
};

inline nlohmann::json to_json(const Annotation& a) {
  nlohmann::json j{{"version", a.version}};
  j["clusters"] = nlohmann::json::object();
  for (const auto& [k, c] : a.clusters) j["clusters"][std::to_string(k)] = to_json_value(c);
  j["trajectories"] = nlohmann::json::object();
  for (const auto& [id, c] : a.trajectories) j["trajectories"][id] = to_json_value(c);
  j["excluded"] = a.excluded;
  return j;
}

inline std::size_t parse_cluster_key(const std::string& key) {
  std::size_t k = 0;
  auto res = std::from_chars(key.data(), key.data() + key.size(), k);
  if (key.empty() || res.ec != std::errc() || res.ptr != key.data() + key.size()) {
    throw ValidationError("cluster key '" + key + "' is not a non-negative integer");
  }
  return k;
}

inline Annotation annotation_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("annotation must be a JSON object");
  Annotation a;
  a.version = j.value("version", std::uint64_t{0});
  if (j.contains("clusters")) {
    for (const auto& [k, c] : j.at("clusters").items()) a.clusters[parse_cluster_key(k)] = class_label_from_json(c);
  }
  if (j.contains("trajectories")) {
    for (const auto& [id, c] : j.at("trajectories").items()) a.trajectories[id] = class_label_from_json(c);
  }
  if (j.contains("excluded")) {
    for (const auto& id : j.at("excluded")) a.excluded.insert(id.get<std::string>());
  }
  return a;
}

/// Cluster membership as stored in clusters.json, id -> cluster.
inline std::map<std::string, std::size_t> cluster_assignments(const nlohmann::json& clusters) {
  std::map<std::string, std::size_t> out;
  for (const auto& [id, k] : clusters.at("assignments").items()) out[id] = k.get<std::size_t>();
  return out;
}

inline LabelsFile materialize_labels(const Annotation& a, const std::map<std::string, std::size_t>& members) {
  LabelsFile out;
  for (const auto& [id, k] : members) {
    std::optional<ClassLabel> cls;
    if (auto t = a.trajectories.find(id); t != a.trajectories.end()) {
      cls = t->second;
    } else if (auto c = a.clusters.find(k); c != a.clusters.end()) {
      cls = c->second;
    }
    if (cls) out[id] = LabelEntry{*cls, a.excluded.count(id) > 0};
  }
  return out;
}

/**
 * Labels each cluster with the most common ground-truth label among its
 * members (ties go to the smaller label). Clusters dominated by anomalies are
 * labelled "anomalous".
 */
inline Annotation annotate_by_majority(const std::map<std::string, std::size_t>& members,
                                       const std::map<std::string, ClassLabel>& truth) {
  std::map<std::size_t, std::map<ClassLabel, std::size_t>> votes;
  for (const auto& [id, k] : members) {
    auto t = truth.find(id);
    if (t == truth.end()) continue;
    votes[k][is_anomaly_label(t->second) ? ClassLabel{std::string("anomalous")} : t->second] += 1;
  }
  if (votes.empty()) throw ValidationError("automatic annotation needs ground truth for the clustered trajectories");
  Annotation a;
  for (const auto& [k, counts] : votes) {
    const ClassLabel* best = nullptr;
    std::size_t top = 0;
    for (const auto& [label, n] : counts) {
      if (n > top) {
        top = n;
        best = &label;
      }
    }
    a.clusters[k] = *best;
  }
  return a;
}

/**
 * Reads a labels file for annotate_mode = file. Two shapes are accepted: the
 * annotation shape {clusters: {k: class}, trajectories: {id: class}} and the
 * labels.json shape {id: {class, excluded}}.
 */
inline Annotation annotation_from_labels_file(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("labels file must be a JSON object");
  if (j.contains("clusters") || j.contains("trajectories")) return annotation_from_json(j);
  Annotation a;
  for (const auto& [id, e] : labels_from_json(j)) {
    a.trajectories[id] = e.cls;
    if (e.excluded) a.excluded.insert(id);
  }
  return a;
}

struct Exclusions {
  std::uint64_t version = 0;
  std::set<std::string> ids;
};

inline Exclusions load_exclusions(const std::filesystem::path& run_dir) {
  const auto path = run_dir / kExclusionsFile;
  Exclusions e;
  if (!std::filesystem::exists(path)) return e;
  const auto j = read_json(path);
  e.version = j.value("version", std::uint64_t{0});
  for (const auto& id : j.at("ids")) e.ids.insert(id.get<std::string>());
  return e;
}

inline void save_exclusions(const std::filesystem::path& run_dir, const Exclusions& e) {
  write_json(run_dir / kExclusionsFile, {{"version", e.version}, {"ids", e.ids}});
}

// ---------------------------------------------------------------------------
// Image store

inline bool safe_file_stem(const std::string& id) {
  if (id.empty() || id.front() == '.' || id.size() > 120) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
           c == '.';
  });
}

/// `<id>.png`, or a hash of the id when it is not a portable file name.
inline std::string image_file_name(const std::string& id) {
  return (safe_file_stem(id) ? id : "id-" + sha256_hex(id).substr(0, 24)) + ".png";
}

/// Loads images listed in images.json, checking each file against its recorded hash.
inline std::vector<GradientImage> load_images(const std::filesystem::path& run_dir, const nlohmann::json& index,
                                              const std::vector<std::string>& ids) {
  const auto& entries = index.at("images");
  std::vector<GradientImage> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    if (!entries.contains(id)) throw ValidationError("no image for trajectory '" + id + "'; rerun rasterize");
    const auto& e = entries.at(id);
    const auto path = run_dir / "images" / e.at("file").get<std::string>();
    auto bytes = read_file_bytes(path);
    const auto sha = sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    if (sha != e.at("sha256").get<std::string>()) {
      throw StaleArtifactError(path.string() + " does not match images.json; rerun rasterize");
    }
    out.push_back(decode_png(std::move(bytes), id));
  }
  return out;
}

inline std::vector<const GradientImage*> pointers_to(const std::vector<GradientImage>& images) {
  std::vector<const GradientImage*> p;
  p.reserve(images.size());
  for (const auto& i : images) p.push_back(&i);
  return p;
}

inline RasterConfig raster_config(const Config& cfg, const SceneBounds& scene) {
  RasterConfig r;
  r.width = r.height = static_cast<int>(cfg.count("resolution"));
  r.thickness = static_cast<int>(cfg.count("thickness"));
  r.hue_span = cfg.real("hue_span");
  r.hue_unit = cfg.get("hue_unit") == "degrees" ? HueUnit::degrees : HueUnit::half_degrees;
  r.mode = cfg.get("color_mode") == "monochrome" ? ColorMode::monochrome : ColorMode::gradient;
  r.margin = static_cast<int>(cfg.count("margin"));
  const auto& b = cfg.get("bounds");
  if (b == "auto") {
    r.bounds = scene;
  } else if (b != "fit") {
    std::vector<double> v;
    std::stringstream ss(b);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(detail::parse_number(item, 0, "bounds"));
    if (v.size() != 4) throw ValidationError("bounds must be auto, fit or x0,y0,x1,y1");
    r.bounds = SceneBounds{v[0], v[1], v[2], v[3]};
  }
  r.validate();
  return r;
}

inline nlohmann::json to_json(const SceneBounds& b) {
  return {{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max}};
}

inline SceneBounds scene_bounds_from_json(const nlohmann::json& j) {
  return {j.at("x_min"), j.at("y_min"), j.at("x_max"), j.at("y_max")};
}

// ---------------------------------------------------------------------------
// Pipeline

struct StageInput {
  std::string key;   // manifest key: run-dir file name, or "ext:" + path
  std::filesystem::path path;
  bool optional = false;
};

class Pipeline {
 public:
  using Log = std::function<void(const std::string&)>;

  Pipeline(std::filesystem::path run_dir, Config cfg, Log log = {})
      : dir_(std::move(run_dir)), cfg_(std::move(cfg)), log_(std::move(log)) {
    std::filesystem::create_directories(dir_);
  }

  [[nodiscard]] const std::filesystem::path& run_dir() const { return dir_; }
  [[nodiscard]] const Config& config() const { return cfg_; }

  [[nodiscard]] std::vector<StageInput> inputs(const std::string& stage) const {
    std::vector<StageInput> in;
    auto file = [&](const std::string& name, bool optional = false) { in.push_back({name, dir_ / name, optional}); };
    auto external = [&](const std::string& path) { in.push_back({"ext:" + path, path, false}); };
    if (stage == "synth") {
      if (!cfg_.get("input").empty()) external(cfg_.get("input"));
      if (!cfg_.get("truth").empty()) external(cfg_.get("truth"));
    } else if (stage == "cluster") {
      file("trajectories.csv");
      file("split.json");
    } else if (stage == "annotate") {
      file("clusters.json");
      if (cfg_.get("annotate_mode") == "auto") file("truth.json");
      if (cfg_.get("annotate_mode") == "file") {
        if (cfg_.get("labels_file").empty()) throw ValidationError("annotate_mode = file needs labels_file");
        external(cfg_.get("labels_file"));
      }
    } else if (stage == "rasterize") {
      file("trajectories.csv");
      file("scene.json");
      file("split.json");
      file("labels.json");
    } else if (stage == "train-cnn" || stage == "train-vae") {
      file("images.json");
      file("labels.json");
    } else if (stage == "embed") {
      file("vae.ckpt");
      file("images.json");
      file("labels.json");
    } else if (stage == "refine") {
      file("vae.ckpt");
      file("vae_history.json");
      file("vae_losses.json");
      file("images.json");
      file("labels.json");
      file(kExclusionsFile, true);
      if (cfg_.flag("refine_suggested")) file("embedding.json");
    } else if (stage == "threshold") {
      file("vae_refined_losses.json");
    } else if (stage == "detect") {
      file("cnn.ckpt");
      file("classes.json");
      file("vae_refined.ckpt");
      file("threshold.json");
      file("images.json");
      file("split.json");
    } else if (stage == "eval") {
      file("verdicts.json");
      file("truth.json");
      file("classes.json");
      file("trajectories.csv");
      file("clusters.json");
    } else {
      throw ValidationError("unknown stage '" + stage + "'");
    }
    return in;
  }

  /**
   * Throws StaleArtifactError when any stage upstream of `stage` ran with
   * other settings, or when a file it read or wrote has changed since.
   */
  void check_upstream(const std::string& stage) const {
    const Manifest m(dir_);
    std::map<std::string, std::string> hashes;
    std::set<std::string> seen;
    for (const auto& in : inputs(stage)) {
      const auto p = producer_of(in.key);
      if (!p.empty()) check_fresh(m, p, hashes, seen);
    }
  }

  /// True when the recorded run of `stage` matches the current settings and files.
  [[nodiscard]] bool up_to_date(const std::string& stage) const {
    const Manifest m(dir_);
    if (!m.has(stage)) return false;
    const auto& e = m.entry(stage);
    if (e.at("params") != cfg_.params(stage)) return false;
    for (const auto& [name, sha] : e.at("outputs").items()) {
      if (sha256_or_absent(dir_ / name) != sha.get<std::string>()) return false;
    }
    nlohmann::json now = nlohmann::json::object();
    for (const auto& in : inputs(stage)) now[in.key] = sha256_or_absent(in.path);
    return now == e.at("inputs");
  }

  void run_stage(const std::string& stage, bool force = false) {
    const auto in = inputs(stage);
    if (stage == "annotate" && cfg_.get("annotate_mode") == "serve") {
      throw ValidationError("annotate_mode = serve: labels come from the annotation service (trajscope annotate --serve)");
    }
    for (const auto& i : in) {
      if (i.optional || std::filesystem::exists(i.path)) continue;
      const auto p = producer_of(i.key);
      throw ValidationError("missing input " + i.path.string() + (p.empty() ? "" : "; run stage '" + p + "' first"));
    }
    if (!force) check_upstream(stage);
    nlohmann::json recorded = nlohmann::json::object();
    for (const auto& i : in) recorded[i.key] = sha256_or_absent(i.path);
    say(stage + ": running");
    execute(stage);
    record(stage, recorded);
    say(stage + ": done");
  }

  /**
   * Runs stages from..to in order, skipping stages whose recorded run is
   * still current. An annotate stage in serve mode must already be done.
   */
  void run(const std::string& from = "synth", const std::string& to = "eval", bool force = false) {
    const auto& names = stage_names();
    auto a = std::find(names.begin(), names.end(), from);
    auto b = std::find(names.begin(), names.end(), to);
    if (a == names.end()) throw ValidationError("unknown stage '" + from + "'");
    if (b == names.end()) throw ValidationError("unknown stage '" + to + "'");
    if (a > b) throw ValidationError("stage '" + from + "' comes after '" + to + "'");
    for (auto it = a; it <= b; ++it) {
      if (up_to_date(*it)) {
        say(*it + ": up to date");
        continue;
      }
      run_stage(*it, force);
    }
  }

  /// Writes annotation.json and labels.json and refreshes the annotate record.
  void write_annotation(const Annotation& a) {
    const auto clusters = read_json(dir_ / "clusters.json");
    write_json(dir_ / "annotation.json", to_json(a));
    write_json(dir_ / "labels.json", labels_to_json(materialize_labels(a, cluster_assignments(clusters))));
  }

  /// Records the annotate stage after an edit made outside run_stage.
  void record_annotation_edit() {
    auto cfg = cfg_;
    cfg.set("annotate_mode", "serve");
    nlohmann::json in = nlohmann::json::object();
    in["clusters.json"] = sha256_or_absent(dir_ / "clusters.json");
    record("annotate", in, cfg.params("annotate"));
  }

 private:
  void say(const std::string& msg) const {
    if (log_) log_(msg);
  }

  std::string hash_cached(const std::filesystem::path& p, std::map<std::string, std::string>& cache) const {
    auto [it, fresh] = cache.try_emplace(p.string());
    if (fresh) it->second = sha256_or_absent(p);
    return it->second;
  }

  void check_fresh(const Manifest& m, const std::string& stage, std::map<std::string, std::string>& hashes,
                   std::set<std::string>& seen) const {
    if (!seen.insert(stage).second) return;
    if (!m.has(stage)) throw StaleArtifactError("stage '" + stage + "' has no provenance record; rerun it");
    const auto& e = m.entry(stage);
    const auto now = cfg_.params(stage);
    const auto& then = e.at("params");
    if (then != now) {
      std::string diff;
      for (const auto& [k, v] : now.items()) {
        const auto old = then.contains(k) ? then.at(k).get<std::string>() : std::string("<unset>");
        if (old != v.get<std::string>()) diff += (diff.empty() ? "" : ", ") + k + ": '" + old + "' -> '" + v.get<std::string>() + "'";
      }
      throw StaleArtifactError("stage '" + stage + "' ran with other settings (" + diff + "); rerun it or pass --force");
    }
    for (const auto& [name, sha] : e.at("outputs").items()) {
      if (hash_cached(dir_ / name, hashes) != sha.get<std::string>()) {
        throw StaleArtifactError(name + " changed after stage '" + stage + "' wrote it; rerun '" + stage + "'");
      }
    }
    for (const auto& [key, sha] : e.at("inputs").items()) {
      const bool ext = key.rfind("ext:", 0) == 0;
      const std::filesystem::path p = ext ? std::filesystem::path(key.substr(4)) : dir_ / key;
      if (hash_cached(p, hashes) != sha.get<std::string>()) {
        throw StaleArtifactError((ext ? key.substr(4) : key) + " changed since stage '" + stage + "' ran; rerun '" +
                                 stage + "'");
      }
      if (!ext) {
        const auto up = producer_of(key);
        if (!up.empty()) check_fresh(m, up, hashes, seen);
      }
    }
  }

  void record(const std::string& stage, const nlohmann::json& inputs) { record(stage, inputs, cfg_.params(stage)); }

  void record(const std::string& stage, const nlohmann::json& inputs, const nlohmann::json& params) {
    Manifest m(dir_);
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& o : stage_outputs(stage)) outputs[o] = sha256_or_absent(dir_ / o);
    m.put(stage, {{"params", params},
                  {"params_sha256", sha256_hex(params.dump())},
                  {"inputs", inputs},
                  {"outputs", outputs}});
    m.save();
  }

  void execute(const std::string& stage) {
    const bool f64 = cfg_.get("precision") == "double";
    if (stage == "synth") {
      synth();
    } else if (stage == "cluster") {
      cluster();
    } else if (stage == "annotate") {
      annotate();
    } else if (stage == "rasterize") {
      rasterize_all();
    } else if (stage == "train-cnn") {
      f64 ? train_cnn<double>() : train_cnn<float>();
    } else if (stage == "train-vae") {
      f64 ? train_vae<double>() : train_vae<float>();
    } else if (stage == "embed") {
      f64 ? embed_latents<double>() : embed_latents<float>();
    } else if (stage == "refine") {
      f64 ? refine<double>() : refine<float>();
    } else if (stage == "threshold") {
      threshold();
    } else if (stage == "detect") {
      f64 ? detect_test<double>() : detect_test<float>();
    } else if (stage == "eval") {
      eval();
    }
  }

  // -- shared loaders ------------------------------------------------------

  [[nodiscard]] std::vector<Trajectory> trajectories() const {
    return load_trajectories((dir_ / "trajectories.csv").string(), TrajectoryFormat::csv);
  }

  [[nodiscard]] std::map<std::string, Split> split() const {
    std::map<std::string, Split> out;
    const auto j = read_json(dir_ / "split.json");
    for (const auto& [id, s] : j.items()) {
      out[id] = s.get<std::string>() == "train" ? Split::train : Split::test;
    }
    return out;
  }

  [[nodiscard]] std::map<std::string, ClassLabel> truth() const {
    std::map<std::string, ClassLabel> out;
    const auto j = read_json(dir_ / "truth.json");
    for (const auto& [id, c] : j.items()) out[id] = class_label_from_json(c);
    return out;
  }

  [[nodiscard]] LabelsFile labels() const { return labels_from_json(read_json(dir_ / "labels.json")); }

  /// Annotated normal training trajectories, sorted by id.
  [[nodiscard]] std::vector<std::string> training_normals() const {
    std::vector<std::string> ids;
    for (const auto& [id, e] : labels()) {
      if (!is_anomaly_label(e.cls) && !e.excluded) ids.push_back(id);
    }
    return ids;
  }

  [[nodiscard]] std::vector<GradientImage> images(const std::vector<std::string>& ids) const {
    return load_images(dir_, read_json(dir_ / "images.json"), ids);
  }

  [[nodiscard]] TrainingConfig vae_training() const {
    return {cfg_.count("vae_epochs"), cfg_.count("vae_batch"), cfg_.real("vae_lr"), cfg_.count("seed")};
  }

  static std::vector<std::size_t> parse_count_list(const std::string& text, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto t = std::string(detail::trim(item));
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(t, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (t.empty() || used != t.size() || t[0] == '-' || v == 0) {
        throw ValidationError(key + ": '" + t + "' is not a positive count");
      }
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  [[nodiscard]] VaeDims vae_dims() const {
    const int r = static_cast<int>(cfg_.count("resolution"));
    return {r, r, cfg_.count("vae_hidden"), cfg_.count("vae_latent")};
  }

  nlohmann::json losses_by_id(const std::vector<std::string>& ids, const std::vector<double>& losses) const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) j[ids[i]] = losses[i];
    return j;
  }

  // -- stages -------------------------------------------------------------

  void synth() {
    const auto seed = cfg_.count("seed");
    std::vector<Trajectory> trajs;
    std::map<std::string, ClassLabel> truth;
    std::map<std::string, Split> split;
    SceneBounds bounds;
    if (cfg_.get("input").empty()) {
      const auto classes = cfg_.count("classes");
      const auto per_class = cfg_.count("per_class");
      SceneSpec spec;
      if (cfg_.get("scene") == "junction") {
        if (classes > 8) throw ValidationError("the junction scene has at most 8 classes");
        spec = junction_scene(per_class, seed);
        spec.templates.resize(classes);
        spec.class_counts.resize(classes);
      } else {
        spec = lanes_scene(classes, per_class, seed);
      }
      if (const auto& counts = cfg_.get("class_counts"); !counts.empty()) {
        spec.class_counts = parse_count_list(counts, "class_counts");
        if (spec.class_counts.size() != classes) {
          throw ValidationError("class_counts lists " + std::to_string(spec.class_counts.size()) + " counts for " +
                                std::to_string(classes) + " classes");
        }
      }
      if (auto s = cfg_.optional_real("lateral_sigma")) {
        for (auto& t : spec.templates) t.lateral_sigma = *s;
      }
      spec.anomalies.truncation = cfg_.count("anomalies_truncation");
      spec.anomalies.speed_variation = cfg_.count("anomalies_speed");
      spec.anomalies.opposite_direction = cfg_.count("anomalies_opposite");
      spec.anomalies.lane_change = cfg_.count("anomalies_lane_change");
      spec.train_fraction = cfg_.real("train_fraction");
      auto ds = synth_generate(spec);
      trajs = std::move(ds.trajectories);
      truth = std::move(ds.labels);
      split = std::move(ds.split);
      bounds = {0.0, 0.0, spec.width, spec.height};
    } else {
      ParseOptions opts;
      opts.frame_rate = cfg_.optional_real("frame_rate");
      const auto fmt = cfg_.get("input_format") == "jsonl" ? TrajectoryFormat::jsonl : TrajectoryFormat::csv;
      trajs = load_trajectories(cfg_.get("input"), fmt, opts);
      if (trajs.empty()) throw ValidationError(cfg_.get("input") + " holds no trajectories");
      if (!cfg_.get("truth").empty()) {
        const auto j = read_json(cfg_.get("truth"));
        for (const auto& [id, c] : j.items()) truth[id] = class_label_from_json(c);
      }
      std::vector<std::string> order;
      for (const auto& t : trajs) order.push_back(t.id());
      auto rng = CounterRng(seed).split("split");
      rng.shuffle(order);
      const auto n_train = static_cast<std::size_t>(std::llround(cfg_.real("train_fraction") * order.size()));
      for (std::size_t i = 0; i < order.size(); ++i) split[order[i]] = i < n_train ? Split::train : Split::test;
      bounds = {trajs.front().front().x, trajs.front().front().y, trajs.front().front().x, trajs.front().front().y};
      for (const auto& t : trajs) {
        for (const auto& p : t.points()) {
          bounds.x_min = std::min(bounds.x_min, p.x);
          bounds.y_min = std::min(bounds.y_min, p.y);
          bounds.x_max = std::max(bounds.x_max, p.x);
          bounds.y_max = std::max(bounds.y_max, p.y);
        }
      }
      if (!(bounds.x_max > bounds.x_min)) bounds.x_max = bounds.x_min + 1.0;
      if (!(bounds.y_max > bounds.y_min)) bounds.y_max = bounds.y_min + 1.0;
    }
    std::ostringstream csv;
    write_csv(csv, trajs);
    write_file_atomic(dir_ / "trajectories.csv", csv.str());
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [id, c] : truth) t[id] = to_json_value(c);
    write_json(dir_ / "truth.json", t);
    nlohmann::json s = nlohmann::json::object();
    for (const auto& [id, v] : split) s[id] = to_string(v);
    write_json(dir_ / "split.json", s);
    write_json(dir_ / "scene.json", {{"bounds", to_json(bounds)}});
    say("synth: " + std::to_string(trajs.size()) + " trajectories");
  }

  void cluster() {
    const auto trajs = trajectories();
    const auto sp = split();
    std::vector<std::string> ids;
    std::vector<FeatureVector> features;
    for (const auto& t : trajs) {
      auto it = sp.find(t.id());
      if (it == sp.end()) throw ValidationError("trajectory '" + t.id() + "' is missing from split.json");
      if (it->second != Split::train) continue;
      ids.push_back(t.id());
      features.push_back(to_feature(t));
    }
    MdpmmConfig mc;
    mc.beta = cfg_.real("beta");
    mc.k_max = cfg_.count("k_max");
    mc.sweeps = cfg_.count("sweeps");
    mc.seed = cfg_.count("seed");
    const auto res = fit(features, mc);
    auto j = cluster_result_to_json(res, ids);
    const auto part = partition_clusters(res, cfg_.count("min_cluster_size"));
    j["prominent"] = part.prominent;
    j["rare"] = part.rare;
    write_json(dir_ / "clusters.json", j);
    say("cluster: " + std::to_string(part.prominent.size()) + " prominent, " + std::to_string(part.rare.size()) +
        " rare clusters over " + std::to_string(ids.size()) + " trajectories");
  }

  void annotate() {
    const auto members = cluster_assignments(read_json(dir_ / "clusters.json"));
    Annotation a = cfg_.get("annotate_mode") == "auto"
                       ? annotate_by_majority(members, truth())
                       : annotation_from_labels_file(read_json(cfg_.get("labels_file")));
    if (std::filesystem::exists(dir_ / "annotation.json")) {
      a.version = annotation_from_json(read_json(dir_ / "annotation.json")).version + 1;
    }
    write_annotation(a);
  }

  void rasterize_all() {
    const auto trajs = trajectories();
    const auto sp = split();
    const auto lab = labels();
    const auto rc = raster_config(cfg_, scene_bounds_from_json(read_json(dir_ / "scene.json").at("bounds")));
    const auto img_dir = dir_ / "images";
    std::filesystem::create_directories(img_dir);
    nlohmann::json index;
    index["raster"] = {{"width", rc.width},         {"height", rc.height},         {"thickness", rc.thickness},
                       {"hue_span", rc.hue_span},   {"hue_unit", cfg_.get("hue_unit")},
                       {"color_mode", cfg_.get("color_mode")}, {"margin", rc.margin},
                       {"bounds", rc.bounds ? to_json(*rc.bounds) : nlohmann::json("fit")}};
    index["images"] = nlohmann::json::object();
    std::set<std::string> files;
    for (const auto& t : trajs) {
      const auto bytes = encode_png(rasterize(t, rc));
      const auto name = image_file_name(t.id());
      if (!files.insert(name).second) throw ValidationError("two trajectories map to image file " + name);
      write_file_atomic(img_dir / name, bytes);
      auto l = lab.find(t.id());
      auto s = sp.find(t.id());
      index["images"][t.id()] = {
          {"file", name},
          {"sha256", sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()))},
          {"class", l == lab.end() ? nlohmann::json(nullptr) : to_json_value(l->second.cls)},
          {"split", s == sp.end() ? nlohmann::json(nullptr) : nlohmann::json(to_string(s->second))}};
    }
    for (const auto& f : std::filesystem::directory_iterator(img_dir)) {
      if (f.path().extension() == ".png" && !files.count(f.path().filename().string())) std::filesystem::remove(f.path());
    }
    write_json(dir_ / "images.json", index);
    say("rasterize: " + std::to_string(trajs.size()) + " images");
  }

  template <class T>
  void train_cnn() {
    const auto ids = training_normals();
    const auto lab = labels();
    std::vector<ClassLabel> cls;
    for (const auto& id : ids) cls.push_back(lab.at(id).cls);
    const ClassCatalog catalog(cls);
    std::vector<std::size_t> y;
    for (const auto& c : cls) y.push_back(static_cast<std::size_t>(*catalog.index_of(c)));
    const auto imgs = images(ids);
    CnnClassifier<T> cnn(catalog.size(), static_cast<int>(cfg_.count("resolution")), cfg_.count("seed"));
    const TrainingConfig tc{cfg_.count("cnn_epochs"), cfg_.count("cnn_batch"), cfg_.real("cnn_lr"), cfg_.count("seed")};
    const auto hist = cnn.train(pointers_to(imgs), y, tc, {}, {}, [&](const EpochRecord& r) {
      say("train-cnn: epoch " + std::to_string(r.epoch) + " loss " + format_double(r.train_loss));
    });
    write_file_atomic(dir_ / "cnn.ckpt", cnn.save({{"classes", catalog.to_json()}}));
    write_json(dir_ / "classes.json", catalog.to_json());
    write_json(dir_ / "cnn_history.json", history_to_json(hist));
  }

  template <class T>
  std::vector<EpochRecord> fit_vae(Vae<T>& vae, const std::vector<std::string>& ids, const std::string& tag) {
    const auto imgs = images(ids);
    return vae.train(pointers_to(imgs), vae_training(), [&](const EpochRecord& r) {
      if (r.epoch % 10 == 0 || r.epoch == 1) {
        say(tag + ": epoch " + std::to_string(r.epoch) + " loss " + format_double(r.train_loss));
      }
    });
  }

  template <class T>
  void train_vae() {
    const auto ids = training_normals();
    Vae<T> vae(vae_dims(), cfg_.count("seed"));
    const auto hist = fit_vae(vae, ids, "train-vae");
    write_file_atomic(dir_ / "vae.ckpt", vae.save());
    write_json(dir_ / "vae_history.json", history_to_json(hist));
    write_json(dir_ / "vae_losses.json", losses_by_id(ids, vae.final_epoch_losses()));
  }

  template <class T>
  void embed_latents() {
    const auto ids = training_normals();
    const auto lab = labels();
    auto vae = Vae<T>::load(read_file_bytes(dir_ / "vae.ckpt"));
    const auto imgs = images(ids);
    const auto ptrs = pointers_to(imgs);
    const std::size_t L = vae.dims().latent;
    std::vector<std::vector<double>> latents;
    constexpr std::size_t chunk = 64;
    for (std::size_t s = 0; s < ptrs.size(); s += chunk) {
      const auto n = std::min(chunk, ptrs.size() - s);
      std::vector<double> mu, logvar;
      vae.encode(std::span<const GradientImage* const>(ptrs.data() + s, n), mu, logvar);
      for (std::size_t i = 0; i < n; ++i) latents.emplace_back(mu.begin() + i * L, mu.begin() + (i + 1) * L);
    }
    std::vector<std::string> classes;
    for (const auto& id : ids) classes.push_back(to_string(lab.at(id).cls));
    TsneConfig tc;
    tc.perplexity = cfg_.real("tsne_perplexity");
    tc.iterations = cfg_.count("tsne_iterations");
    tc.seed = cfg_.count("seed");
    TsneResult details;
    auto e = embed(ids, latents, classes, tc, &details);
    const auto report = suggest_outliers(e, cfg_.real("outlier_k_sigma"));
    write_json(dir_ / "embedding.json", embedding_to_json(e));
    write_json(dir_ / "embedding_meta.json", {{"count", ids.size()},
                                              {"perplexity", details.perplexity},
                                              {"initial_kl", details.initial_kl},
                                              {"kl_after_exaggeration", number_or_null(details.kl_after_exaggeration)},
                                              {"final_kl", details.final_kl},
                                              {"suggested", report.flagged},
                                              {"skipped_classes", report.skipped_classes}});
    say("embed: " + std::to_string(report.flagged.size()) + " suggested outliers");
  }

  template <class T>
  void refine() {
    const auto base = training_normals();
    std::set<std::string> drop;
    const std::set<std::string> known(base.begin(), base.end());
    for (const auto& id : load_exclusions(dir_).ids) {
      if (known.count(id)) {
        drop.insert(id);
      } else {
        warn("exclusion '" + id + "' is not an annotated normal training trajectory; ignored");
      }
    }
    if (cfg_.flag("refine_suggested")) {
      const auto e = embedding_from_json(read_json(dir_ / "embedding.json"));
      for (const auto& p : e.points) {
        if (p.suggested && known.count(p.id)) drop.insert(p.id);
      }
    }
    std::vector<std::string> keep;
    for (const auto& id : base) {
      if (!drop.count(id)) keep.push_back(id);
    }
    if (keep.empty()) throw ValidationError("every training trajectory is excluded");
    const bool retrain = !drop.empty();
    if (retrain) {
      Vae<T> vae(vae_dims(), cfg_.count("seed"));
      const auto hist = fit_vae(vae, keep, "refine");
      write_file_atomic(dir_ / "vae_refined.ckpt", vae.save());
      write_json(dir_ / "vae_refined_history.json", history_to_json(hist));
      write_json(dir_ / "vae_refined_losses.json", losses_by_id(keep, vae.final_epoch_losses()));
    } else {
      // Training is deterministic, so the first model is the refined model.
      write_file_atomic(dir_ / "vae_refined.ckpt", read_file_bytes(dir_ / "vae.ckpt"));
      write_file_atomic(dir_ / "vae_refined_history.json", read_file_bytes(dir_ / "vae_history.json"));
      write_file_atomic(dir_ / "vae_refined_losses.json", read_file_bytes(dir_ / "vae_losses.json"));
    }
    write_json(dir_ / "refine.json",
               {{"excluded", drop}, {"trained_on", keep.size()}, {"retrained", retrain}, {"before", base.size()}});
    say("refine: training on " + std::to_string(keep.size()) + " of " + std::to_string(base.size()));
  }

  void threshold() {
    std::vector<double> losses;
    const auto j = read_json(dir_ / "vae_refined_losses.json");
    for (const auto& [id, l] : j.items()) losses.push_back(l.get<double>());
    const auto t = compute_threshold(losses, cfg_.real("threshold_factor"));
    write_json(dir_ / "threshold.json", to_json(t));
    say("threshold: delta " + format_double(t.delta));
  }

  [[nodiscard]] SignalContext signal_context(const ClassCatalog& catalog) const {
    const auto& list = cfg_.get("allowed_classes");
    if (list.empty()) {
      auto ctx = SignalContext::all_of(catalog);
      ctx.signal = cfg_.get("signal");
      return ctx;
    }
    SignalContext ctx{cfg_.get("signal"), {}};
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) ctx.allowed.push_back(parse_class_label(item));
    return ctx;
  }

  template <class T>
  void detect_test() {
    std::vector<std::string> ids;
    const auto sp = split();
    for (const auto& t : trajectories()) {
      auto it = sp.find(t.id());
      if (it != sp.end() && it->second == Split::test) ids.push_back(t.id());
    }
    const auto catalog = ClassCatalog::from_json(read_json(dir_ / "classes.json"));
    auto cnn = CnnClassifier<T>::load(read_file_bytes(dir_ / "cnn.ckpt"));
    auto vae = Vae<T>::load(read_file_bytes(dir_ / "vae_refined.ckpt"));
    const auto th = threshold_from_json(read_json(dir_ / "threshold.json"));
    const auto imgs = images(ids);
    const auto verdicts = detect_images<T>(pointers_to(imgs), cnn, vae, catalog, signal_context(catalog), th.delta,
                                           cfg_.count("score_samples"), cfg_.count("seed"));
    write_file_atomic(dir_ / "verdicts.csv", verdicts_to_csv(verdicts));
    write_json(dir_ / "verdicts.json", verdicts_to_json(verdicts));
    std::size_t flagged = 0;
    for (const auto& v : verdicts) flagged += v.anomalous() ? 1 : 0;
    say("detect: " + std::to_string(flagged) + " of " + std::to_string(verdicts.size()) + " flagged");
  }

  void eval() {
    const auto verdicts = verdicts_from_json(read_json(dir_ / "verdicts.json"));
    const auto tr = truth();
    const auto catalog = ClassCatalog::from_json(read_json(dir_ / "classes.json"));
    const auto clusters = read_json(dir_ / "clusters.json");
    const auto trajs = trajectories();
    const auto summary = summarize(trajs, tr, clusters.at("clusters").size());
    const auto report = evaluate(verdicts, tr, catalog, summary);
    write_json(dir_ / "eval_report.json", to_json(report));
    say("eval: anomaly accuracy " + format_double(report.anomaly.accuracy()) + ", recall " +
        format_double(report.anomaly.recall()));
  }

  std::filesystem::path dir_;
  Config cfg_;
  Log log_;
};

}  // namespace trajscope
