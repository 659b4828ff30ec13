#include "blobdrag/rng.hpp"

#include <cmath>
#include <numbers>

namespace blobdrag {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index) {
  return splitmix64(splitmix64(root ^ fnv1a64(label)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

double GaussianSampler::uniform() {
  // 53 random mantissa bits, shifted off zero.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double GaussianSampler::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

Latent gaussian_latent(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Latent out(h, w, c);
  GaussianSampler rng(seed);
  for (double& v : out.data()) v = rng.normal();
  return out;
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::uint64_t seed) {
  Matrix m(rows, cols);
  GaussianSampler rng(seed);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

}  // namespace blobdrag
