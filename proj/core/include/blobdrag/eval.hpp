#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blobdrag/blobgeom.hpp"
#include "blobdrag/pipeline.hpp"
#include "blobdrag/tensor.hpp"

namespace blobdrag {

/// Image crop -> perceptual feature vector.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(const Latent& crop) const = 0;
};

/// Seeded random projection of a crop area-averaged to 16 x 16. The same
/// projection is applied to every channel and the per-channel results are
/// concatenated, so cosine similarity is invariant to a joint channel
/// permutation.
class ToyEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kGrid = 16;

  explicit ToyEmbedder(std::size_t per_channel_dim = 32, std::uint64_t seed = 7);

  std::vector<double> embed(const Latent& crop) const override;
  std::size_t per_channel_dim() const { return static_cast<std::size_t>(projection_.rows()); }

 private:
  Matrix projection_;  // per_channel_dim x (kGrid * kGrid)
};

struct EvalCase {
  Latent source;
  Latent edited;
  BlobParams source_blob;
  BlobParams target_blob;
};

struct EvalReport {
  double foreground = 0.0;
  double traces = 0.0;
  double kid = 0.0;
};

inline constexpr std::size_t kCanonicalCrop = 64;

/// Tight square crop around a blob, background outside the ellipse zeroed,
/// content shifted to the left edge (vertically centred) and resized to
/// kCanonicalCrop. `erase` cells are zeroed before cropping when non-null.
Latent canonical_crop(const Latent& image, const BlobParams& blob, const Mask* erase = nullptr);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Source object under B_s vs edited image under B_d.
double foreground_similarity(const EvalCase& c, const Embedder& emb);

/// Source under B_s vs edited under B_s with B_d zeroed. High = object left traces.
double object_traces(const EvalCase& c, const Embedder& emb);

/// Unbiased MMD^2 with kernel (x.y / d + 1)^3.
double kid(std::span<const std::vector<double>> real_set,
           std::span<const std::vector<double>> fake_set);

struct EvalCaseTemplate {
  std::size_t scene_index = 0;
  BlobParams source_blob;
  BlobParams target_blob;
};

struct EvalDatasetRules {
  double min_area_fraction = 0.05;
  double max_area_fraction = 0.25;
  int targets_per_scene = 8;
  double displacement_at_512 = 64.0;
  int max_attempts = 1000;
};

struct EvalDataset {
  std::vector<EvalCaseTemplate> cases;
  std::vector<std::string> warnings;
};

/// Minimum drag distance in grid units for an image of the given height.
double displacement_threshold(std::size_t height, const EvalDatasetRules& rules = {});

/// Filters scenes by the area of their first blob and samples target
/// centres for the survivors.
EvalDataset build_eval_cases(std::span<const Scene> scenes, std::uint64_t seed,
                             const EvalDatasetRules& rules = {});

}  // namespace blobdrag
