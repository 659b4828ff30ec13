#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace blobdrag {

/// Row-major dense matrix. Token matrices use one row per token.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// H x W x C real-valued grid stored channel-last (HWC).
///
/// The flattened layout matches a (H*W) x C token matrix with row-major
/// cells, so `as_tokens()` is a zero-copy view.
class Latent {
 public:
  Latent() = default;
  Latent(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t cells() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c, std::size_t ch) {
    return data_[(r * width_ + c) * channels_ + ch];
  }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data_[(r * width_ + c) * channels_ + ch];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Eigen::Map<Matrix> as_tokens();
  Eigen::Map<const Matrix> as_tokens() const;

  static Latent from_tokens(const Matrix& tokens, std::size_t height, std::size_t width);

  bool same_shape(const Latent& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const Latent&, const Latent&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Latent& a, const Latent& b);

/// Average-pools each channel by integer factors height()/h and width()/w.
Latent average_pool(const Latent& x, std::size_t h, std::size_t w);

/// Nearest-neighbour upsampling by integer factors.
Latent upsample_nearest(const Latent& x, std::size_t h, std::size_t w);

/// Half-pixel-centred bilinear resize with edge clamping.
Latent resize_bilinear(const Latent& x, std::size_t h, std::size_t w);

}  // namespace blobdrag
