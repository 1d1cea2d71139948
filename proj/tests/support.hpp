#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "trajscope/raster.hpp"
#include "trajscope/rng.hpp"

namespace trajscope::test_support {

inline std::vector<const GradientImage*> pointers(const std::vector<GradientImage>& v) {
  std::vector<const GradientImage*> out;
  for (const auto& i : v) out.push_back(&i);
  return out;
}

/// Empty per-test directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "trajscope-tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct LatentBlobs {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> classes;
};

// Isotropic Gaussian classes in `dim` dimensions: centres ~ N(0, spread^2), unit spread inside a class.
inline LatentBlobs latent_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                                std::uint64_t seed) {
  const CounterRng root(seed);
  LatentBlobs b;
  for (std::size_t c = 0; c < classes; ++c) {
    auto crng = root.split("centre").split(c);
    std::vector<double> centre(dim);
    for (auto& v : centre) v = crng.normal(0.0, spread);
    auto prng = root.split("points").split(c);
    for (std::size_t i = 0; i < per_class; ++i) {
      auto row = centre;
      for (auto& v : row) v += prng.normal();
      b.rows.push_back(std::move(row));
      b.classes.push_back("c" + std::to_string(c));
    }
  }
  return b;
}

}  // namespace trajscope::test_support
