#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blobdrag/attnctl.hpp"
#include "blobdrag/blobgeom.hpp"
#include "blobdrag/denoiser.hpp"
#include "blobdrag/schedule.hpp"
#include "blobdrag/tensor.hpp"

namespace blobdrag {

enum class Provenance { generated, real };

/// Blobs plus a latent. For generated scenes the latent is the shared
/// initial noise x_T (drawn from the edit seed when left empty); for real
/// scenes it is the clean image latent.
struct Scene {
  std::vector<BlobSpec> blobs;
  Latent latent;
  Provenance provenance = Provenance::generated;

  /// Throws ValidationError naming the offending field.
  void validate(const DenoiserSpec& spec) const;
};

/// Which blob moves and where. Either full target parameters or a new
/// centre, in which case size and orientation are copied from the source.
struct DragRequest {
  std::size_t source_blob_index = 0;
  std::optional<BlobParams> target_params;
  std::optional<std::pair<double, double>> target_center;

  BlobParams resolve(const Scene& scene, const DenoiserSpec& spec) const;
};

struct EditConfig {
  int steps = 50;
  std::optional<int> rho;       // defaults to steps / 2
  std::optional<int> dilation;  // defaults to scaled_dilation_kernel(latent height)
  std::uint64_t seed = 0;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  bool parallel_streams = false;
  bool mask_gated_self_attention = true;

  int effective_rho() const;
  int effective_dilation(std::size_t latent_height) const;
  void validate(std::size_t latent_height) const;
};

/// round_odd(50 * height / 512), at least 1.
int scaled_dilation_kernel(std::size_t height);

/// Per-layer counts of mechanism applications in the target stream.
struct EditStats {
  std::vector<int> kv_shares;
  std::vector<int> soft_anchors;
  std::vector<int> nn_copies;
};

struct EditResult {
  Latent source;
  Latent edited;
  EditStats stats;
  /// Reshaped gated-attention maps of the target stream, one per blob,
  /// averaged over steps and layers at latent resolution.
  std::vector<Latent> attention_maps;
  /// Latent-resolution region allowed to change (real path only).
  Mask editable_region;
};

/// Source and target DDIM streams from shared initial noise. The target
/// shares the source's self-attention keys/values at every layer and step,
/// soft-anchors its outputs for the first rho steps and nearest-neighbour
/// copies source features into the target blob for the rest.
EditResult edit_generated(const Scene& scene, const DragRequest& drag, const EditConfig& cfg,
                          const Denoiser& model);

/// Self-attention records of a real latent noised independently at every
/// step with seeded noise.
AttentionTrace ddpm_bucket(const Latent& real_latent, const Scene& scene, const EditConfig& cfg,
                           const Denoiser& model);

/// Bucketing noise for step t. Shared by ddpm_bucket and background blending.
Latent bucket_noise(const Latent& like, std::uint64_t seed, int t);

/// Cells outside the returned mask are kept from the real latent:
/// dilate(rasterize(src) | rasterize(dst), k) at latent resolution.
Mask editable_region(const BlobParams& source, const BlobParams& target,
                     std::size_t height, std::size_t width, int k);

/// Real-image drag: source features from ddpm_bucket, target stream as in
/// edit_generated, background blended from the noised real latent every
/// step. Output equals real_latent bit-for-bit outside the editable region.
EditResult edit_real(const Latent& real_latent, const Scene& scene, const DragRequest& drag,
                     const EditConfig& cfg, const Denoiser& model);

/// Fits one blob per instance mask and embeds its description.
std::vector<BlobSpec> extract_blobs(std::span<const Mask> instance_masks,
                                    std::span<const std::string> descriptions,
                                    std::size_t text_width, std::uint64_t seed);

}  // namespace blobdrag
