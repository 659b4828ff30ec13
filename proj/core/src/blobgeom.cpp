#include "blobdrag/blobgeom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "blobdrag/error.hpp"

namespace blobdrag {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMinRadius = 0.5;

double wrap_half_turn(double theta) {
  theta = std::fmod(theta, kPi);
  if (theta <= -kPi / 2) theta += kPi;
  if (theta > kPi / 2) theta -= kPi;
  return theta;
}

struct EllipseTest {
  double cx, cy, cos_t, sin_t, inv_a2, inv_b2;

  explicit EllipseTest(const BlobParams& p)
      : cx(p.cx), cy(p.cy), cos_t(std::cos(p.theta)), sin_t(std::sin(p.theta)),
        inv_a2(1.0 / (p.a * p.a)), inv_b2(1.0 / (p.b * p.b)) {}

  bool contains(std::size_t r, std::size_t c) const {
    const double dx = static_cast<double>(c) + 0.5 - cx;
    const double dy = static_cast<double>(r) + 0.5 - cy;
    const double u = cos_t * dx + sin_t * dy;
    const double v = -sin_t * dx + cos_t * dy;
    return u * u * inv_a2 + v * v * inv_b2 <= 1.0;
  }
};

// Half extents of the rotated ellipse's axis-aligned box.
std::pair<double, double> half_extents(const BlobParams& p) {
  const double c = std::cos(p.theta);
  const double s = std::sin(p.theta);
  return {std::sqrt(p.a * p.a * c * c + p.b * p.b * s * s),
          std::sqrt(p.a * p.a * s * s + p.b * p.b * c * c)};
}

struct CellRange {
  std::size_t r0, r1, c0, c1;  // half-open
};

CellRange candidate_cells(const BlobParams& p, std::size_t height, std::size_t width) {
  const auto [ex, ey] = half_extents(p);
  auto lo = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(std::floor(v - 0.5) - 1.0, 0.0, static_cast<double>(n)));
  };
  auto hi = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v - 0.5) + 2.0, 0.0, static_cast<double>(n)));
  };
  return {lo(p.cy - ey, height), hi(p.cy + ey, height), lo(p.cx - ex, width), hi(p.cx + ex, width)};
}

void require_same_shape(const Mask& a, const Mask& b, const char* op) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(op) + ": mask dimensions differ");
}

// IoU of the rasterised ellipse against a target, visiting only cells near the ellipse.
double ellipse_iou(const BlobParams& p, const Mask& target, std::size_t target_area) {
  const EllipseTest test(p);
  const CellRange range = candidate_cells(p, target.height(), target.width());
  std::size_t inside = 0;
  std::size_t both = 0;
  for (std::size_t r = range.r0; r < range.r1; ++r) {
    for (std::size_t c = range.c0; c < range.c1; ++c) {
      if (test.contains(r, c)) {
        ++inside;
        if (target.at(r, c)) ++both;
      }
    }
  }
  const std::size_t uni = inside + target_area - both;
  return uni == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(uni);
}

}  // namespace

BlobParams BlobParams::canonical() const {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("blob radii must be positive");
  BlobParams out = *this;
  if (out.a < out.b) {
    std::swap(out.a, out.b);
    out.theta += kPi / 2;
  }
  out.theta = wrap_half_turn(out.theta);
  return out;
}

Mask::Mask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

std::size_t Mask::area() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<std::size_t> Mask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) out.push_back(i);
  }
  return out;
}

Mask rasterize_blob(const BlobParams& params, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw InvalidArgument("rasterize_blob: empty grid");
  if (!(params.a > 0.0) || !(params.b > 0.0)) {
    throw InvalidArgument("rasterize_blob: radii must be positive");
  }
  Mask out(height, width);
  const EllipseTest test(params);
  const CellRange range = candidate_cells(params, height, width);
  for (std::size_t r = range.r0; r < range.r1; ++r) {
    for (std::size_t c = range.c0; c < range.c1; ++c) {
      if (test.contains(r, c)) out.set(r, c);
    }
  }
  return out;
}

double mask_iou(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "mask_iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.cells(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask dilate(const Mask& m, int k) {
  if (k < 1 || k % 2 == 0) throw InvalidArgument("dilate: kernel size must be odd and >= 1");
  const auto radius = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(m.height());
  const auto w = static_cast<std::ptrdiff_t>(m.width());
  // Square element is separable: row pass then column pass.
  Mask rows(m.height(), m.width());
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      if (!m.at(r, c)) continue;
      for (std::ptrdiff_t cc = std::max<std::ptrdiff_t>(0, c - radius);
           cc <= std::min(w - 1, c + radius); ++cc) {
        rows.set(r, cc);
      }
    }
  }
  Mask out(m.height(), m.width());
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      if (!rows.at(r, c)) continue;
      for (std::ptrdiff_t rr = std::max<std::ptrdiff_t>(0, r - radius);
           rr <= std::min(h - 1, r + radius); ++rr) {
        out.set(rr, c);
      }
    }
  }
  return out;
}

Mask resize_mask(const Mask& m, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw InvalidArgument("resize_mask: target dimensions must be >= 1");
  if (m.height() == 0 || m.width() == 0) throw InvalidArgument("resize_mask: empty source");
  Mask out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t sr = r * m.height() / h;
    for (std::size_t c = 0; c < w; ++c) {
      if (m.at(sr, c * m.width() / w)) out.set(r, c);
    }
  }
  return out;
}

Mask mask_union(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "mask_union");
  Mask out(a.height(), a.width());
  for (std::size_t r = 0; r < a.height(); ++r) {
    for (std::size_t c = 0; c < a.width(); ++c) {
      if (a.at(r, c) || b.at(r, c)) out.set(r, c);
    }
  }
  return out;
}

BlobParams ellipse_from_moments(const Mask& target) {
  const std::size_t n = target.area();
  if (n < kMinFitArea) throw DegenerateMask("degenerate mask: fewer than 4 cells");
  double sx = 0.0, sy = 0.0;
  for (std::size_t r = 0; r < target.height(); ++r) {
    for (std::size_t c = 0; c < target.width(); ++c) {
      if (!target.at(r, c)) continue;
      sx += static_cast<double>(c) + 0.5;
      sy += static_cast<double>(r) + 0.5;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double mx = sx * inv_n;
  const double my = sy * inv_n;
  double cxx = 0.0, cyy = 0.0, cxy = 0.0;
  for (std::size_t r = 0; r < target.height(); ++r) {
    for (std::size_t c = 0; c < target.width(); ++c) {
      if (!target.at(r, c)) continue;
      const double dx = static_cast<double>(c) + 0.5 - mx;
      const double dy = static_cast<double>(r) + 0.5 - my;
      cxx += dx * dx;
      cyy += dy * dy;
      cxy += dx * dy;
    }
  }
  cxx *= inv_n;
  cyy *= inv_n;
  cxy *= inv_n;
  // Closed-form eigen-decomposition of the 2x2 covariance.
  const double mean = 0.5 * (cxx + cyy);
  const double spread = std::sqrt(0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy);
  const double major = mean + spread;
  const double minor = std::max(mean - spread, 0.0);
  BlobParams p;
  p.cx = mx;
  p.cy = my;
  // A uniform ellipse has variance r^2 / 4 along each axis.
  p.a = std::max(2.0 * std::sqrt(major), kMinRadius);
  p.b = std::max(2.0 * std::sqrt(minor), kMinRadius);
  p.theta = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
  return p.canonical();
}

EllipseFit fit_ellipse_detailed(const Mask& target, const EllipseFitOptions& options) {
  const std::size_t area = target.area();
  if (area < kMinFitArea) throw DegenerateMask("degenerate mask: fewer than 4 cells");

  const BlobParams init = ellipse_from_moments(target);
  std::array<double, 5> x{init.cx, init.cy, init.a, init.b, init.theta};
  std::array<double, 5> step{options.initial_center_step, options.initial_center_step,
                             options.initial_radius_step, options.initial_radius_step,
                             options.initial_angle_step};

  auto to_params = [](const std::array<double, 5>& v) {
    return BlobParams{v[0], v[1], v[2], v[3], v[4]};
  };
  auto score = [&](const std::array<double, 5>& v) {
    return ellipse_iou(to_params(v), target, area);
  };

  double best = score(x);
  int sweeps = 0;
  while (sweeps < options.max_sweeps) {
    ++sweeps;
    const double sweep_start = best;
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (double dir : {1.0, -1.0}) {
        // Walk in this direction while it keeps paying off.
        for (;;) {
          auto trial = x;
          trial[i] += dir * step[i];
          if (i == 2 || i == 3) trial[i] = std::max(trial[i], kMinRadius);
          const double s = score(trial);
          if (s <= best) break;
          best = s;
          x = trial;
        }
      }
    }
    if (best - sweep_start < options.tolerance) {
      if (step[0] <= options.min_center_step && step[4] <= options.min_angle_step) break;
      for (double& s : step) s *= options.shrink;
    }
  }

  EllipseFit fit;
  fit.params = to_params(x).canonical();
  fit.iou = best;
  fit.sweeps = sweeps;
  return fit;
}

CellBox bounding_box(const Mask& m) {
  CellBox box{m.height(), m.width(), 0, 0};
  bool any = false;
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c < m.width(); ++c) {
      if (!m.at(r, c)) continue;
      any = true;
      box.row0 = std::min(box.row0, r);
      box.col0 = std::min(box.col0, c);
      box.row1 = std::max(box.row1, r + 1);
      box.col1 = std::max(box.col1, c + 1);
    }
  }
  return any ? box : CellBox{};
}

bool ellipse_within(const BlobParams& params, std::size_t height, std::size_t width) {
  const auto [ex, ey] = half_extents(params);
  return params.cx - ex >= 0.0 && params.cx + ex <= static_cast<double>(width) &&
         params.cy - ey >= 0.0 && params.cy + ey <= static_cast<double>(height);
}

}  // namespace blobdrag
