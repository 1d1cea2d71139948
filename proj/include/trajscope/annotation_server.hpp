#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "trajscope/pipeline.hpp"

/*
 * Annotation service over a run directory.
 *
 *   GET /clusters                   [{cluster, count, prominent, class}]
 *   GET /clusters/{k}/trajectories  [{id, class, excluded, image}]
 *   GET /images/{id}                PNG
 *   GET /embedding                  [{id, z1, z2, class, suggested, excluded}]
 *   GET /labels                     {version, clusters, trajectories, labels}
 *   PUT /labels                     {clusters: {k: class|null}, trajectories: {id: class|null}}
 *   PUT /exclusions                 {ids: [...], excluded: bool}
 *
 * PUT bodies may carry expected_version; a mismatch answers 409. A PUT that
 * changes nothing leaves the version alone. Writes are serialized and each
 * one is fsynced before the response is sent.
 */

namespace trajscope {

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class AnnotationService {
 public:
  AnnotationService(std::filesystem::path run_dir, Config cfg)
      : dir_(std::move(run_dir)), pipeline_(dir_, std::move(cfg)) {
    if (!std::filesystem::exists(dir_ / "clusters.json")) {
      throw ValidationError("no clusters.json in " + dir_.string() + "; run the cluster stage first");
    }
    clusters_ = read_json(dir_ / "clusters.json");
    members_ = cluster_assignments(clusters_);
    if (std::filesystem::exists(dir_ / "annotation.json")) {
      annotation_ = annotation_from_json(read_json(dir_ / "annotation.json"));
    }
    exclusions_ = load_exclusions(dir_);
  }

  // -- handlers, usable without a socket ------------------------------------

  ApiResponse get_clusters() const {
    std::shared_lock lock(mutex_);
    const std::set<std::size_t> prominent(clusters_.at("prominent").begin(), clusters_.at("prominent").end());
    auto out = nlohmann::json::array();
    for (const auto& c : clusters_.at("clusters")) {
      const auto k = c.at("k").get<std::size_t>();
      auto cls = annotation_.clusters.find(k);
      out.push_back({{"cluster", k},
                     {"count", c.at("count")},
                     {"prominent", prominent.count(k) > 0},
                     {"class", cls == annotation_.clusters.end() ? nlohmann::json(nullptr) : to_json_value(cls->second)}});
    }
    return json_response(out);
  }

  ApiResponse get_cluster_trajectories(const std::string& key) const {
    std::size_t k = 0;
    try {
      k = parse_cluster_key(key);
    } catch (const ValidationError&) {
      return error(404, "no cluster '" + key + "'");
    }
    std::shared_lock lock(mutex_);
    const auto labels = materialize_labels(annotation_, members_);
    auto out = nlohmann::json::array();
    for (const auto& [id, m] : members_) {
      if (m != k) continue;
      auto l = labels.find(id);
      out.push_back({{"id", id},
                     {"class", l == labels.end() ? nlohmann::json(nullptr) : to_json_value(l->second.cls)},
                     {"excluded", exclusions_.ids.count(id) > 0},
                     {"image", "/images/" + id}});
    }
    if (out.empty()) return error(404, "no cluster '" + key + "'");
    return json_response(out);
  }

  /// Stored PNG when rasterize has run, otherwise rendered from the trajectory.
  ApiResponse get_image(const std::string& id) const {
    std::shared_lock lock(mutex_);
    if (std::filesystem::exists(dir_ / "images.json")) {
      const auto index = read_json(dir_ / "images.json");
      if (index.at("images").contains(id)) {
        try {
          const auto bytes = read_file_bytes(dir_ / "images" / index["images"][id]["file"].get<std::string>());
          return {200, std::string(bytes.begin(), bytes.end()), "image/png"};
        } catch (const ValidationError&) {
          // fall through to rendering
        }
      }
    }
    for (const auto& t : trajectories()) {
      if (t.id() != id) continue;
      const auto bounds = scene_bounds_from_json(read_json(dir_ / "scene.json").at("bounds"));
      const auto bytes = encode_png(rasterize(t, raster_config(pipeline_.config(), bounds)));
      return {200, std::string(bytes.begin(), bytes.end()), "image/png"};
    }
    return error(404, "no trajectory '" + id + "'");
  }

  ApiResponse get_embedding() const {
    std::shared_lock lock(mutex_);
    if (!std::filesystem::exists(dir_ / "embedding.json")) return error(404, "no embedding yet; run the embed stage");
    auto points = read_json(dir_ / "embedding.json");
    for (auto& p : points) p["excluded"] = exclusions_.ids.count(p.at("id").get<std::string>()) > 0;
    return json_response(points);
  }

  ApiResponse get_labels() const {
    std::shared_lock lock(mutex_);
    auto j = to_json(annotation_);
    j.erase("excluded");
    j["labels"] = labels_to_json(materialize_labels(annotation_, members_));
    return json_response(j);
  }

  ApiResponse put_labels(const std::string& body) {
    return guarded([&] {
      const auto req = parse_body(body);
      std::unique_lock lock(mutex_);
      if (auto r = version_conflict(req, annotation_.version)) return *r;
      Annotation next = annotation_;
      if (req.contains("clusters")) {
        for (const auto& [key, cls] : req.at("clusters").items()) {
          const auto k = parse_cluster_key(key);
          if (!has_cluster(k)) throw ValidationError("no cluster " + key);
          if (cls.is_null()) {
            next.clusters.erase(k);
          } else {
            next.clusters[k] = checked_label(cls);
          }
        }
      }
      if (req.contains("trajectories")) {
        for (const auto& [id, cls] : req.at("trajectories").items()) {
          if (!members_.count(id)) throw ValidationError("trajectory '" + id + "' is not in the clustered set");
          if (cls.is_null()) {
            next.trajectories.erase(id);
          } else {
            next.trajectories[id] = checked_label(cls);
          }
        }
      }
      const bool changed = !(next == annotation_);
      if (changed) {
        next.version = annotation_.version + 1;
        pipeline_.write_annotation(next);
        pipeline_.record_annotation_edit();
        annotation_ = std::move(next);
      }
      return json_response({{"version", annotation_.version}, {"changed", changed}});
    });
  }

  ApiResponse put_exclusions(const std::string& body) {
    return guarded([&] {
      const auto req = parse_body(body);
      std::unique_lock lock(mutex_);
      if (auto r = version_conflict(req, exclusions_.version)) return *r;
      if (!req.contains("ids") || !req.at("ids").is_array()) throw ValidationError("body needs an ids array");
      const bool excluded = req.value("excluded", true);
      Exclusions next = exclusions_;
      for (const auto& v : req.at("ids")) {
        if (!v.is_string()) throw ValidationError("ids must be strings");
        const auto id = v.get<std::string>();
        if (!members_.count(id)) throw ValidationError("trajectory '" + id + "' is not in the clustered set");
        if (excluded) {
          next.ids.insert(id);
        } else {
          next.ids.erase(id);
        }
      }
      const bool changed = next.ids != exclusions_.ids;
      if (changed) {
        next.version = exclusions_.version + 1;
        save_exclusions(dir_, next);
        exclusions_ = std::move(next);
      }
      return json_response({{"version", exclusions_.version}, {"changed", changed}, {"ids", exclusions_.ids}});
    });
  }

  // -- HTTP -----------------------------------------------------------------

  /// Binds the listening socket; port 0 picks a free port. Returns the port.
  int bind(const std::string& host, int port) {
    routes();
    if (port == 0) {
      port = server_.bind_to_any_port(host);
      if (port < 0) throw std::runtime_error("cannot listen on " + host);
    } else if (!server_.bind_to_port(host, port)) {
      throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port) + " (port busy?)");
    }
    return port;
  }

  /// Serves until stop() is called.
  void listen() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  static ApiResponse json_response(const nlohmann::json& j, int status = 200) { return {status, j.dump(), "application/json"}; }
  static ApiResponse error(int status, const std::string& msg) { return json_response({{"error", msg}}, status); }

  static nlohmann::json parse_body(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      if (!j.is_object()) throw ValidationError("request body must be a JSON object");
      return j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
  }

  static ClassLabel checked_label(const nlohmann::json& j) {
    auto l = class_label_from_json(j);
    if (const auto* s = std::get_if<std::string>(&l); s && detail::trim(*s).empty()) {
      throw ValidationError("class name must not be empty");
    }
    return l;
  }

  static std::optional<ApiResponse> version_conflict(const nlohmann::json& req, std::uint64_t current) {
    if (!req.contains("expected_version")) return std::nullopt;
    if (req.at("expected_version").get<std::uint64_t>() == current) return std::nullopt;
    return json_response({{"error", "version conflict"}, {"version", current}}, 409);
  }

  template <class F>
  static ApiResponse guarded(F&& f) {
    try {
      return f();
    } catch (const ValidationError& e) {
      return error(400, e.what());
    } catch (const nlohmann::json::exception& e) {
      return error(400, e.what());
    }
  }

  [[nodiscard]] bool has_cluster(std::size_t k) const {
    for (const auto& c : clusters_.at("clusters")) {
      if (c.at("k").get<std::size_t>() == k) return true;
    }
    return false;
  }

  [[nodiscard]] const std::vector<Trajectory>& trajectories() const {
    std::call_once(traj_once_, [&] {
      trajectories_ = load_trajectories((dir_ / "trajectories.csv").string(), TrajectoryFormat::csv);
    });
    return trajectories_;
  }

  static void reply(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  }

  void routes() {
    server_.Get("/clusters", [this](const httplib::Request&, httplib::Response& res) { reply(res, get_clusters()); });
    server_.Get(R"(/clusters/([^/]+)/trajectories)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, get_cluster_trajectories(req.matches[1]));
    });
    server_.Get(R"(/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, get_image(req.matches[1]));
    });
    server_.Get("/embedding", [this](const httplib::Request&, httplib::Response& res) { reply(res, get_embedding()); });
    server_.Get("/labels", [this](const httplib::Request&, httplib::Response& res) { reply(res, get_labels()); });
    server_.Put("/labels", [this](const httplib::Request& req, httplib::Response& res) { reply(res, put_labels(req.body)); });
    server_.Put("/exclusions", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, put_exclusions(req.body));
    });
  }

  std::filesystem::path dir_;
  Pipeline pipeline_;
  nlohmann::json clusters_;
  std::map<std::string, std::size_t> members_;
  Annotation annotation_;
  Exclusions exclusions_;
  mutable std::shared_mutex mutex_;
  mutable std::once_flag traj_once_;
  mutable std::vector<Trajectory> trajectories_;
  httplib::Server server_;
};

}  // namespace trajscope
