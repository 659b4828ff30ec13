#include "blobdrag/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "blobdrag/error.hpp"

namespace blobdrag {

Latent::Latent(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels),
      data_(height * width * channels, fill) {}

Eigen::Map<Matrix> Latent::as_tokens() {
  return {data_.data(), static_cast<Eigen::Index>(cells()), static_cast<Eigen::Index>(channels_)};
}

Eigen::Map<const Matrix> Latent::as_tokens() const {
  return {data_.data(), static_cast<Eigen::Index>(cells()), static_cast<Eigen::Index>(channels_)};
}

Latent Latent::from_tokens(const Matrix& tokens, std::size_t height, std::size_t width) {
  if (static_cast<std::size_t>(tokens.rows()) != height * width) {
    throw InvalidArgument("token count does not match grid size");
  }
  Latent out(height, width, static_cast<std::size_t>(tokens.cols()));
  out.as_tokens() = tokens;
  return out;
}

double max_abs_diff(const Latent& a, const Latent& b) {
  if (!a.same_shape(b)) throw InvalidArgument("max_abs_diff: shape mismatch");
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

Latent average_pool(const Latent& x, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || x.height() % h != 0 || x.width() % w != 0) {
    throw InvalidArgument("average_pool: target must evenly divide the source grid");
  }
  const std::size_t fy = x.height() / h;
  const std::size_t fx = x.width() / w;
  const double scale = 1.0 / static_cast<double>(fy * fx);
  Latent out(h, w, x.channels());
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t ch = 0; ch < x.channels(); ++ch) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < fy; ++dy) {
          for (std::size_t dx = 0; dx < fx; ++dx) s += x.at(r * fy + dy, c * fx + dx, ch);
        }
        out.at(r, c, ch) = s * scale;
      }
    }
  }
  return out;
}

Latent upsample_nearest(const Latent& x, std::size_t h, std::size_t w) {
  if (x.height() == 0 || x.width() == 0 || h % x.height() != 0 || w % x.width() != 0) {
    throw InvalidArgument("upsample_nearest: target must be a multiple of the source grid");
  }
  const std::size_t fy = h / x.height();
  const std::size_t fx = w / x.width();
  Latent out(h, w, x.channels());
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t ch = 0; ch < x.channels(); ++ch) out.at(r, c, ch) = x.at(r / fy, c / fx, ch);
    }
  }
  return out;
}

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

Tap bilinear_tap(std::size_t i, std::size_t src, std::size_t dst) {
  double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
  pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, src - 1);
  return {lo, hi, pos - static_cast<double>(lo)};
}

}  // namespace

Latent resize_bilinear(const Latent& x, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || x.height() == 0 || x.width() == 0) {
    throw InvalidArgument("resize_bilinear: empty grid");
  }
  if (h == x.height() && w == x.width()) return x;
  Latent out(h, w, x.channels());
  for (std::size_t r = 0; r < h; ++r) {
    const Tap ty = bilinear_tap(r, x.height(), h);
    for (std::size_t c = 0; c < w; ++c) {
      const Tap tx = bilinear_tap(c, x.width(), w);
      for (std::size_t ch = 0; ch < x.channels(); ++ch) {
        const double top = x.at(ty.lo, tx.lo, ch) * (1.0 - tx.frac) + x.at(ty.lo, tx.hi, ch) * tx.frac;
        const double bottom = x.at(ty.hi, tx.lo, ch) * (1.0 - tx.frac) + x.at(ty.hi, tx.hi, ch) * tx.frac;
        out.at(r, c, ch) = top * (1.0 - ty.frac) + bottom * ty.frac;
      }
    }
  }
  return out;
}

}  // namespace blobdrag
