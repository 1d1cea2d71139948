#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "trajscope/errors.hpp"

namespace trajscope {

/// Integer class index, a named class ("down-flow"), or "anomaly:<type>".
using ClassLabel = std::variant<std::int64_t, std::string>;

inline bool is_anomaly_label(const ClassLabel& label) {
  const auto* s = std::get_if<std::string>(&label);
  return s != nullptr && (s->rfind("anomaly", 0) == 0 || *s == "anomalous");
}

inline std::string to_string(const ClassLabel& label) {
  if (const auto* i = std::get_if<std::int64_t>(&label)) return std::to_string(*i);
  return std::get<std::string>(label);
}

inline nlohmann::json to_json_value(const ClassLabel& label) {
  if (const auto* i = std::get_if<std::int64_t>(&label)) return *i;
  return std::get<std::string>(label);
}

inline ClassLabel class_label_from_json(const nlohmann::json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_string()) return j.get<std::string>();
  throw ValidationError("class label must be an integer or a string, got " + j.dump());
}

struct LabelEntry {
  ClassLabel cls = std::int64_t{0};
  bool excluded = false;

  friend bool operator==(const LabelEntry&, const LabelEntry&) = default;
};

/// Labels file: id -> {class, excluded}. Keys are kept sorted so the file
/// serializes identically regardless of insertion order.
using LabelsFile = std::map<std::string, LabelEntry>;

inline nlohmann::json labels_to_json(const LabelsFile& labels) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, e] : labels) {
    j[id] = {{"class", to_json_value(e.cls)}, {"excluded", e.excluded}};
  }
  return j;
}

inline LabelsFile labels_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("labels file must be a JSON object");
  LabelsFile out;
  for (const auto& [id, v] : j.items()) {
    if (!v.is_object() || !v.contains("class")) {
      throw ValidationError("labels entry '" + id + "' must be an object with a 'class' field");
    }
    LabelEntry e;
    e.cls = class_label_from_json(v.at("class"));
    e.excluded = v.value("excluded", false);
    out.emplace(id, std::move(e));
  }
  return out;
}

/**
 * Dense, stable numbering of the normal classes that occur in a labels map.
 * Integer labels come first in ascending order, then named classes in
 * lexicographic order. Anomaly labels are not part of the catalog.
 */
class ClassCatalog {
 public:
  ClassCatalog() = default;

  explicit ClassCatalog(const std::vector<ClassLabel>& labels) {
    std::set<std::int64_t> ints;
    std::set<std::string> names;
    for (const auto& l : labels) {
      if (is_anomaly_label(l)) continue;
      if (const auto* i = std::get_if<std::int64_t>(&l)) {
        ints.insert(*i);
      } else {
        names.insert(std::get<std::string>(l));
      }
    }
    for (auto i : ints) classes_.emplace_back(i);
    for (auto& n : names) classes_.emplace_back(n);
  }

  static ClassCatalog from_labels(const LabelsFile& labels) {
    std::vector<ClassLabel> all;
    for (const auto& [id, e] : labels) all.push_back(e.cls);
    return ClassCatalog(all);
  }

  [[nodiscard]] std::size_t size() const { return classes_.size(); }
  [[nodiscard]] const std::vector<ClassLabel>& classes() const { return classes_; }

  [[nodiscard]] std::optional<int> index_of(const ClassLabel& label) const {
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (classes_[i] == label) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : classes_) j.push_back(to_json_value(c));
    return j;
  }

  static ClassCatalog from_json(const nlohmann::json& j) {
    ClassCatalog c;
    for (const auto& v : j) c.classes_.push_back(class_label_from_json(v));
    return c;
  }

 private:
  std::vector<ClassLabel> classes_;
};

}  // namespace trajscope
