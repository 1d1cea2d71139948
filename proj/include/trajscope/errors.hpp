#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>

namespace trajscope {

/// Input or configuration that violates a documented contract.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline artifact no longer matches the hashes recorded when it was
/// produced (or when its producer consumed its own inputs).
class StaleArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Replaces the warning sink and returns the previous one.
inline std::function<void(const std::string&)> set_warning_sink(
    std::function<void(const std::string&)> sink) {
  std::lock_guard lock(detail::warning_mutex());
  return std::exchange(detail::warning_sink(), std::move(sink));
}

inline void warn(const std::string& message) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(message);
}

}  // namespace trajscope
