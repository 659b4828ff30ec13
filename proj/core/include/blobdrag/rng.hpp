#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "blobdrag/tensor.hpp"

namespace blobdrag {

/// Mixes a root seed with a text label and an index into an independent
/// 64-bit stream seed. Every random draw in the library goes through this,
/// so one root seed reproduces a whole run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0);

std::uint64_t fnv1a64(std::string_view text);

/// Portable standard-normal sampler on top of mt19937_64. The standard
/// library distributions are implementation-defined, this one is not.
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // in (0, 1)
  double normal();

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

Latent gaussian_latent(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed);
Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::uint64_t seed);

}  // namespace blobdrag
