// Brute-force reference implementations used only by tests.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "blobdrag/blobgeom.hpp"
#include "blobdrag/denoiser.hpp"
#include "blobdrag/tensor.hpp"

namespace oracle {

using blobdrag::BlobParams;
using blobdrag::Mask;
using blobdrag::Matrix;

inline bool inside_ellipse(const BlobParams& p, double x, double y) {
  const double dx = x - p.cx;
  const double dy = y - p.cy;
  const double u = std::cos(p.theta) * dx + std::sin(p.theta) * dy;
  const double v = -std::sin(p.theta) * dx + std::cos(p.theta) * dy;
  return (u * u) / (p.a * p.a) + (v * v) / (p.b * p.b) <= 1.0;
}

inline std::size_t membership_count(const BlobParams& p, std::size_t h, std::size_t w) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      if (inside_ellipse(p, c + 0.5, r + 0.5)) ++n;
  return n;
}

/// Minkowski sum with the k x k square, by enumerating every offset.
inline Mask minkowski_dilate(const Mask& m, int k) {
  Mask out(m.height(), m.width());
  const int h = static_cast<int>(m.height());
  const int w = static_cast<int>(m.width());
  const int half = k / 2;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!m.at(r, c)) continue;
      for (int dr = -half; dr <= half; ++dr)
        for (int dc = -half; dc <= half; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < h && cc >= 0 && cc < w) out.set(rr, cc);
        }
    }
  return out;
}

inline double cosine(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    dot += a(i, k) * b(j, k);
    na += a(i, k) * a(i, k);
    nb += b(j, k) * b(j, k);
  }
  if (na == 0.0 || nb == 0.0) return -1.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Exhaustive cosine argmax, lowest index wins ties.
inline Matrix nn_copy(const Matrix& anchor, const Matrix& source, const Mask& dest, const Mask& src) {
  Matrix out = anchor;
  for (std::size_t d = 0; d < dest.cells(); ++d) {
    if (!dest[d]) continue;
    double best = -2.0;
    std::size_t arg = 0;
    for (std::size_t s = 0; s < src.cells(); ++s) {
      if (!src[s]) continue;
      const double score = cosine(anchor, d, source, s);
      if (score > best) {
        best = score;
        arg = s;
      }
    }
    out.row(d) = source.row(arg);
  }
  return out;
}

/// Self-attention output equals the layer's visual input; predicts zero noise.
class IdentityDenoiser final : public blobdrag::Denoiser {
 public:
  explicit IdentityDenoiser(blobdrag::DenoiserSpec spec) : spec_(std::move(spec)) {}
  const blobdrag::DenoiserSpec& spec() const override { return spec_; }
  using Denoiser::predict_noise;
  blobdrag::Latent predict_noise(const blobdrag::Latent& x_t, int t,
                                 std::span<const blobdrag::BlobSpec>,
                                 blobdrag::AttentionHooks& hooks) const override {
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      const blobdrag::LayerInfo& info = spec_.layers[l];
      const blobdrag::LayerCall call{t, l, &info};
      Matrix tokens = blobdrag::average_pool(x_t, info.height, info.width).as_tokens();
      Matrix keys = tokens;
      Matrix values = tokens;
      hooks.on_self_attention_kv(call, keys, values);
      Matrix output = tokens;
      hooks.on_self_attention_output(call, keys, values, output);
    }
    return blobdrag::Latent(x_t.height(), x_t.width(), x_t.channels());
  }

 private:
  blobdrag::DenoiserSpec spec_;
};

}  // namespace oracle
