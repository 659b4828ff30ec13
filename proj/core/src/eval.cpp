#include "blobdrag/eval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "blobdrag/error.hpp"
#include "blobdrag/rng.hpp"

namespace blobdrag {

ToyEmbedder::ToyEmbedder(std::size_t per_channel_dim, std::uint64_t seed) {
  if (per_channel_dim == 0) throw InvalidArgument("embedder dimension must be positive");
  const auto inputs = static_cast<Eigen::Index>(kGrid * kGrid);
  projection_ = gaussian_matrix(static_cast<Eigen::Index>(per_channel_dim), inputs,
                                1.0 / std::sqrt(static_cast<double>(inputs)),
                                derive_seed(seed, "embedder"));
}

std::vector<double> ToyEmbedder::embed(const Latent& crop) const {
  if (crop.empty()) throw InvalidArgument("embedder: empty crop");
  const bool divisible = crop.height() % kGrid == 0 && crop.width() % kGrid == 0;
  const Latent small = divisible ? average_pool(crop, kGrid, kGrid) : resize_bilinear(crop, kGrid, kGrid);
  const std::size_t d = per_channel_dim();
  std::vector<double> out(d * small.channels());
  Vector plane(static_cast<Eigen::Index>(kGrid * kGrid));
  for (std::size_t ch = 0; ch < small.channels(); ++ch) {
    for (std::size_t i = 0; i < kGrid * kGrid; ++i) {
      plane[static_cast<Eigen::Index>(i)] = small.data()[i * small.channels() + ch];
    }
    const Vector projected = projection_ * plane;
    std::copy(projected.data(), projected.data() + d, out.begin() + static_cast<std::ptrdiff_t>(ch * d));
  }
  return out;
}

Latent canonical_crop(const Latent& image, const BlobParams& blob, const Mask* erase) {
  const Mask mask = rasterize_blob(blob, image.height(), image.width());
  const CellBox box = bounding_box(mask);
  if (box.empty()) throw InvalidArgument("blob rasterises to an empty mask");
  if (erase != nullptr && (erase->height() != image.height() || erase->width() != image.width())) {
    throw InvalidArgument("erase mask does not match the image");
  }
  const std::size_t channels = image.channels();
  auto kept = [&](std::size_t r, std::size_t c) {
    return mask.at(r, c) && (erase == nullptr || !erase->at(r, c));
  };

  // Extent of the surviving, non-zero content inside the box.
  CellBox content{box.row1, box.col1, box.row0, box.col0};
  for (std::size_t r = box.row0; r < box.row1; ++r) {
    for (std::size_t c = box.col0; c < box.col1; ++c) {
      if (!kept(r, c)) continue;
      bool nonzero = false;
      for (std::size_t ch = 0; ch < channels && !nonzero; ++ch) nonzero = image.at(r, c, ch) != 0.0;
      if (!nonzero) continue;
      content.row0 = std::min(content.row0, r);
      content.col0 = std::min(content.col0, c);
      content.row1 = std::max(content.row1, r + 1);
      content.col1 = std::max(content.col1, c + 1);
    }
  }

  const std::size_t side = std::max(box.rows(), box.cols());
  Latent canvas(side, side, channels);
  if (!content.empty()) {
    const std::size_t top = (side - content.rows()) / 2;
    for (std::size_t r = content.row0; r < content.row1; ++r) {
      for (std::size_t c = content.col0; c < content.col1; ++c) {
        if (!kept(r, c)) continue;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          canvas.at(top + r - content.row0, c - content.col0, ch) = image.at(r, c, ch);
        }
      }
    }
  }
  return resize_bilinear(canvas, kCanonicalCrop, kCanonicalCrop);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

void check_case(const EvalCase& c) {
  if (c.source.empty() || !c.source.same_shape(c.edited)) {
    throw InvalidArgument("eval case: source and edited images must have the same non-empty shape");
  }
}

}  // namespace

double foreground_similarity(const EvalCase& c, const Embedder& emb) {
  check_case(c);
  const auto a = emb.embed(canonical_crop(c.source, c.source_blob));
  const auto b = emb.embed(canonical_crop(c.edited, c.target_blob));
  return cosine_similarity(a, b);
}

double object_traces(const EvalCase& c, const Embedder& emb) {
  check_case(c);
  const Mask target = rasterize_blob(c.target_blob, c.edited.height(), c.edited.width());
  const auto a = emb.embed(canonical_crop(c.source, c.source_blob));
  const auto b = emb.embed(canonical_crop(c.edited, c.source_blob, &target));
  return cosine_similarity(a, b);
}

double kid(std::span<const std::vector<double>> real_set,
           std::span<const std::vector<double>> fake_set) {
  const std::size_t m = real_set.size();
  const std::size_t n = fake_set.size();
  if (m < 2 || n < 2) throw InvalidArgument("kid: each set needs at least 2 embeddings");
  const std::size_t dim = real_set.front().size();
  if (dim == 0) throw InvalidArgument("kid: empty embeddings");
  for (const auto& v : real_set) {
    if (v.size() != dim) throw InvalidArgument("kid: embedding dimensions differ");
  }
  for (const auto& v : fake_set) {
    if (v.size() != dim) throw InvalidArgument("kid: embedding dimensions differ");
  }
  const double inv_dim = 1.0 / static_cast<double>(dim);
  auto kernel = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double dot = 0.0;
    for (std::size_t i = 0; i < dim; ++i) dot += x[i] * y[i];
    const double base = dot * inv_dim + 1.0;
    return base * base * base;
  };
  auto within = [&](std::span<const std::vector<double>> set) {
    double s = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t j = 0; j < set.size(); ++j) {
        if (i != j) s += kernel(set[i], set[j]);
      }
    }
    return s / (static_cast<double>(set.size()) * static_cast<double>(set.size() - 1));
  };
  double cross = 0.0;
  for (const auto& x : real_set) {
    for (const auto& y : fake_set) cross += kernel(x, y);
  }
  return within(real_set) + within(fake_set) -
         2.0 * cross / (static_cast<double>(m) * static_cast<double>(n));
}

double displacement_threshold(std::size_t height, const EvalDatasetRules& rules) {
  return rules.displacement_at_512 * static_cast<double>(height) / 512.0;
}

EvalDataset build_eval_cases(std::span<const Scene> scenes, std::uint64_t seed,
                             const EvalDatasetRules& rules) {
  EvalDataset out;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const Scene& scene = scenes[si];
    const std::string label = "scene " + std::to_string(si);
    if (scene.blobs.empty()) {
      out.warnings.push_back(label + ": no blobs, skipped");
      continue;
    }
    if (scene.latent.empty()) {
      out.warnings.push_back(label + ": no image, skipped");
      continue;
    }
    const std::size_t h = scene.latent.height();
    const std::size_t w = scene.latent.width();
    const BlobParams& primary = scene.blobs.front().params;
    const double fraction =
        static_cast<double>(rasterize_blob(primary, h, w).area()) / static_cast<double>(h * w);
    if (fraction < rules.min_area_fraction || fraction > rules.max_area_fraction) continue;

    const double threshold = displacement_threshold(h, rules);
    GaussianSampler rng(derive_seed(seed, "eval-targets", si));
    std::vector<EvalCaseTemplate> found;
    for (int attempt = 0; attempt < rules.max_attempts &&
                          static_cast<int>(found.size()) < rules.targets_per_scene;
         ++attempt) {
      BlobParams target = primary;
      target.cx = rng.uniform() * static_cast<double>(w);
      target.cy = rng.uniform() * static_cast<double>(h);
      if (std::hypot(target.cx - primary.cx, target.cy - primary.cy) < threshold) continue;
      if (!ellipse_within(target, h, w)) continue;
      found.push_back({si, primary, target});
    }
    if (static_cast<int>(found.size()) < rules.targets_per_scene) {
      out.warnings.push_back(label + ": only " + std::to_string(found.size()) + " valid targets after " +
                             std::to_string(rules.max_attempts) + " samples, skipped");
      continue;
    }
    out.cases.insert(out.cases.end(), found.begin(), found.end());
  }
  return out;
}

}  // namespace blobdrag
