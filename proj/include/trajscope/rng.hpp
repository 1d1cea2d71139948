#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace trajscope {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/**
 * Counter-based random stream.
 *
 * Every draw is a pure function of (key, counter), so a stream can be
 * re-derived anywhere from its key alone. Child streams are derived with
 * split() from either a name ("cnn/init/layer3") or integer coordinates
 * (sweep, index); siblings are statistically independent.
 *
 * Gaussian draws use Box-Muller on top of the uniform stream rather than
 * std::normal_distribution, whose output is implementation-defined.
 */
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key = 0) : key_(detail::splitmix64(key)) {}

  [[nodiscard]] constexpr std::uint64_t key() const { return key_; }

  [[nodiscard]] CounterRng split(std::string_view name) const {
    return from_raw(detail::splitmix64(key_ ^ detail::fnv1a64(name)));
  }

  [[nodiscard]] CounterRng split(std::uint64_t a) const {
    return from_raw(detail::splitmix64(key_ + detail::splitmix64(a ^ 0x5851f42d4c957f2dULL)));
  }

  [[nodiscard]] CounterRng split(std::uint64_t a, std::uint64_t b) const {
    return split(a).split(b);
  }

  std::uint64_t next_u64() {
    return detail::splitmix64(key_ ^ detail::splitmix64(counter_++));
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static CounterRng from_raw(std::uint64_t raw) {
    CounterRng r;
    r.key_ = raw;
    return r;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace trajscope
