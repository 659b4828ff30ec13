#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "blobdrag/tensor.hpp"

namespace blobdrag {

/// Tilted ellipse in continuous grid coordinates. Cell (r, c) has its centre
/// at (x, y) = (c + 0.5, r + 0.5); cx runs along columns, cy along rows.
struct BlobParams {
  double cx = 0.0;
  double cy = 0.0;
  double a = 1.0;      // semi-major radius
  double b = 1.0;      // semi-minor radius
  double theta = 0.0;  // radians, rotation of the major axis from +x towards +y

  /// a >= b > 0 and theta in (-pi/2, pi/2]. Throws on non-positive radii.
  BlobParams canonical() const;

  friend bool operator==(const BlobParams&, const BlobParams&) = default;
};

/// Binary occupancy grid.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t height, std::size_t width, bool fill = false);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t cells() const { return bits_.size(); }

  bool at(std::size_t r, std::size_t c) const { return bits_[r * width_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits_[r * width_ + c] = v ? 1 : 0; }
  bool operator[](std::size_t flat) const { return bits_[flat] != 0; }

  std::size_t area() const;
  bool empty() const { return area() == 0; }
  bool same_shape(const Mask& o) const { return height_ == o.height_ && width_ == o.width_; }

  /// Row-major indices of true cells.
  std::vector<std::size_t> indices() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// A blob as fed to the denoiser: geometry, free-text description and its
/// text embedding.
struct BlobSpec {
  BlobParams params;
  std::string description;
  std::vector<double> embedding;
};

Mask rasterize_blob(const BlobParams& params, std::size_t height, std::size_t width);

/// |a & b| / |a | b|, and 1 for two empty masks.
double mask_iou(const Mask& a, const Mask& b);

/// Square k x k structuring element, k odd. Clipped at the borders.
Mask dilate(const Mask& m, int k);

/// Nearest-neighbour resampling: target index i reads source floor(i * src / dst).
Mask resize_mask(const Mask& m, std::size_t h, std::size_t w);

Mask mask_union(const Mask& a, const Mask& b);

struct EllipseFitOptions {
  double initial_center_step = 1.0;
  double initial_radius_step = 1.0;
  double initial_angle_step = 0.2;
  double shrink = 0.5;
  double min_center_step = 0.02;
  double min_angle_step = 1e-3;
  double tolerance = 1e-4;  // stop refining a scale once a sweep gains less IoU than this
  int max_sweeps = 400;
};

struct EllipseFit {
  BlobParams params;
  double iou = 0.0;
  int sweeps = 0;
};

inline constexpr std::size_t kMinFitArea = 4;

/// IoU-maximising ellipse for a binary mask. Initialised from second moments,
/// refined by coordinate descent. Throws DegenerateMask below kMinFitArea cells.
EllipseFit fit_ellipse_detailed(const Mask& target, const EllipseFitOptions& options = {});

inline BlobParams fit_ellipse(const Mask& target) { return fit_ellipse_detailed(target).params; }

/// Moment-based initial guess used by fit_ellipse (radii = 2 * sqrt(eigenvalue)).
BlobParams ellipse_from_moments(const Mask& target);

/// Axis-aligned bounding box of the rasterised ellipse, half-open.
struct CellBox {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;
  std::size_t rows() const { return row1 - row0; }
  std::size_t cols() const { return col1 - col0; }
  bool empty() const { return row1 <= row0 || col1 <= col0; }
};
CellBox bounding_box(const Mask& m);

/// True if the continuous ellipse lies entirely inside [0, width] x [0, height].
bool ellipse_within(const BlobParams& params, std::size_t height, std::size_t width);

}  // namespace blobdrag
