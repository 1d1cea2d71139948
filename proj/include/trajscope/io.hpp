#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"
#include "trajscope/trajectory.hpp"

namespace trajscope {

enum class TrajectoryFormat { csv, jsonl };

struct ParseOptions {
  /// When set, input timestamps are frame indices and are divided by this
  /// rate to obtain seconds.
  std::optional<double> frame_rate;
};

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_number(std::string_view s, std::size_t line, std::string_view what) {
  s = trim(s);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError("line " + std::to_string(line) + ": malformed " + std::string(what) + " '" +
                          std::string(s) + "'");
  }
  return v;
}

struct RawSample {
  double x, y, t;
  std::size_t line;
};

// Groups rows by id in first-appearance order, sorts each group by time and
// rejects duplicate timestamps.
inline std::vector<Trajectory> assemble(std::vector<std::string>& order,
                                        std::map<std::string, std::vector<RawSample>>& groups,
                                        const ParseOptions& opts) {
  if (opts.frame_rate && !(*opts.frame_rate > 0.0)) {
    throw ValidationError("frame rate must be positive");
  }
  std::vector<Trajectory> out;
  out.reserve(order.size());
  for (const auto& id : order) {
    auto& rows = groups.at(id);
    std::stable_sort(rows.begin(), rows.end(),
                     [](const RawSample& a, const RawSample& b) { return a.t < b.t; });
    std::vector<TrajectoryPoint> pts;
    pts.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0 && rows[i].t == rows[i - 1].t) {
        throw ValidationError("line " + std::to_string(rows[i].line) + ": duplicate timestamp for id '" +
                              id + "'");
      }
      const double t = opts.frame_rate ? rows[i].t / *opts.frame_rate : rows[i].t;
      pts.push_back({rows[i].x, rows[i].y, t});
    }
    out.emplace_back(id, std::move(pts));
  }
  return out;
}

inline void add_sample(std::vector<std::string>& order, std::map<std::string, std::vector<RawSample>>& groups,
                       const std::string& id, RawSample s) {
  if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.t)) {
    throw ValidationError("line " + std::to_string(s.line) + ": non-finite value");
  }
  auto [it, inserted] = groups.try_emplace(id);
  if (inserted) order.push_back(id);
  it->second.push_back(s);
}

inline std::vector<Trajectory> parse_csv(std::istream& in, const ParseOptions& opts) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<RawSample>> groups;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty()) continue;
    if (!header_seen) {
      if (body != "id,x,y,t") {
        throw ValidationError("line " + std::to_string(lineno) + ": expected header 'id,x,y,t'");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= body.size(); ++i) {
      if (i == body.size() || body[i] == ',') {
        fields.push_back(body.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 4) {
      throw ValidationError("line " + std::to_string(lineno) + ": expected 4 fields, got " +
                            std::to_string(fields.size()));
    }
    const auto id = trim(fields[0]);
    if (id.empty()) throw ValidationError("line " + std::to_string(lineno) + ": empty id");
    add_sample(order, groups, std::string(id),
               {parse_number(fields[1], lineno, "x"), parse_number(fields[2], lineno, "y"),
                parse_number(fields[3], lineno, "t"), lineno});
  }
  return assemble(order, groups, opts);
}

inline std::vector<Trajectory> parse_jsonl(std::istream& in, const ParseOptions& opts) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<RawSample>> groups;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("points") ||
        !j["points"].is_array()) {
      throw ValidationError("line " + std::to_string(lineno) +
                            ": expected {\"id\": string, \"points\": [[x,y,t],...]}");
    }
    const auto id = j["id"].get<std::string>();
    if (id.empty()) throw ValidationError("line " + std::to_string(lineno) + ": empty id");
    for (const auto& p : j["points"]) {
      if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() || !p[2].is_number()) {
        throw ValidationError("line " + std::to_string(lineno) + ": each point must be [x, y, t]");
      }
      add_sample(order, groups, id, {p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), lineno});
    }
  }
  return assemble(order, groups, opts);
}

}  // namespace detail

/**
 * Reads trajectories from CSV (header `id,x,y,t`, one sample per row) or
 * JSONL (`{"id":..., "points":[[x,y,t],...]}` per line).
 *
 * Returns one trajectory per distinct id, in order of first appearance, with
 * points sorted by time. Throws ValidationError naming the offending line for
 * malformed rows or duplicate (id, t) pairs.
 */
inline std::vector<Trajectory> parse_trajectories(std::istream& in, TrajectoryFormat format,
                                                  const ParseOptions& opts = {}) {
  return format == TrajectoryFormat::csv ? detail::parse_csv(in, opts) : detail::parse_jsonl(in, opts);
}

inline std::vector<Trajectory> load_trajectories(const std::string& path, TrajectoryFormat format,
                                                 const ParseOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return parse_trajectories(in, format, opts);
}

inline void write_csv(std::ostream& out, std::span<const Trajectory> trajs) {
  out << "id,x,y,t\n";
  for (const auto& tr : trajs) {
    for (const auto& p : tr.points()) {
      out << tr.id() << ',' << format_double(p.x) << ',' << format_double(p.y) << ',' << format_double(p.t)
          << '\n';
    }
  }
}

inline void write_jsonl(std::ostream& out, std::span<const Trajectory> trajs) {
  for (const auto& tr : trajs) {
    out << "{\"id\":" << nlohmann::json(tr.id()).dump() << ",\"points\":[";
    bool first = true;
    for (const auto& p : tr.points()) {
      if (!first) out << ',';
      first = false;
      out << '[' << format_double(p.x) << ',' << format_double(p.y) << ',' << format_double(p.t) << ']';
    }
    out << "]}\n";
  }
}

}  // namespace trajscope
