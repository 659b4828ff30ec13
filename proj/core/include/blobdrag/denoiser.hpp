#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "blobdrag/attnctl.hpp"
#include "blobdrag/blobgeom.hpp"
#include "blobdrag/tensor.hpp"

namespace blobdrag {

struct LayerInfo {
  int id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  friend bool operator==(const LayerInfo&, const LayerInfo&) = default;
};

/// Shape contract of a denoiser: latent size, the ordered registry of
/// attention blocks, text-token width and the weight seed.
struct DenoiserSpec {
  std::size_t latent_height = 32;
  std::size_t latent_width = 32;
  std::size_t latent_channels = 8;
  std::vector<LayerInfo> layers{{0, 16, 16, 32}, {1, 8, 8, 64}};
  std::size_t text_width = 64;
  std::uint64_t seed = 20240521;

  /// Throws InvalidArgument if a layer does not evenly divide the latent grid.
  void validate() const;

  friend bool operator==(const DenoiserSpec&, const DenoiserSpec&) = default;
};

/// Every attention block carries both blob-conditioning layers.
struct BlockConfig {
  bool has_gated_self_attention = true;
  bool has_masked_cross_attention = true;
};

/// Identifies one self-attention invocation.
struct LayerCall {
  int step = 0;
  std::size_t layer = 0;  // position in the registry
  const LayerInfo* info = nullptr;
};

/// Interception points inside a denoiser forward pass. The default
/// implementation is the identity on every hook.
class AttentionHooks {
 public:
  virtual ~AttentionHooks() = default;

  /// Whether gated self-attention restricts each text token to its blob.
  virtual bool mask_gated_attention() const { return true; }

  /// Keys and values of a self-attention layer before attention is taken;
  /// the hook may replace them.
  virtual void on_self_attention_kv(const LayerCall& /*call*/, Matrix& /*keys*/,
                                    Matrix& /*values*/) {}

  /// The layer's attention output with the keys/values actually used; the hook
  /// may rewrite the output before it enters the residual stream.
  virtual void on_self_attention_output(const LayerCall& /*call*/, const Matrix& /*keys*/,
                                        const Matrix& /*values*/, Matrix& /*output*/) {}

  /// Post-softmax gated self-attention weights, for visualisation.
  virtual void on_gated_attention(const LayerCall& /*call*/, const AttentionMap& /*map*/) {}

  virtual bool wants_gated_attention() const { return false; }
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual const DenoiserSpec& spec() const = 0;

  /// Noise prediction at step t. Must be a pure function of its arguments
  /// and the model's own seed, and must call `hooks` for every registry
  /// layer in order.
  virtual Latent predict_noise(const Latent& x_t, int t, std::span<const BlobSpec> blobs,
                               AttentionHooks& hooks) const = 0;

  Latent predict_noise(const Latent& x_t, int t, std::span<const BlobSpec> blobs) const;
};

/// Small seeded random-weight network with the block structure of a
/// blob-grounded UNet: per block self-attention, gated self-attention over
/// visual and pooled blob tokens, blob-masked cross-attention, a per-cell MLP
/// and a 3x3 output convolution. Blocks read the average-pooled latent in
/// parallel and their outputs are upsampled and summed.
class ToyDenoiser final : public Denoiser {
 public:
  explicit ToyDenoiser(DenoiserSpec spec = {});
  ~ToyDenoiser() override;

  ToyDenoiser(const ToyDenoiser&) = default;
  ToyDenoiser& operator=(const ToyDenoiser&) = default;

  static constexpr BlockConfig kBlockConfig{};

  const DenoiserSpec& spec() const override { return spec_; }

  using Denoiser::predict_noise;
  Latent predict_noise(const Latent& x_t, int t, std::span<const BlobSpec> blobs,
                       AttentionHooks& hooks) const override;

  /// Gate scalar gamma of every gated self-attention layer; tanh(gamma) = 0.5.
  static double gate_gamma();

 private:
  struct Weights;
  DenoiserSpec spec_;
  std::shared_ptr<const Weights> weights_;
};

/// Blob rasterised at latent resolution and resampled to a layer grid.
Mask blob_mask_for_layer(const BlobParams& params, const DenoiserSpec& spec,
                         const LayerInfo& layer);

/// Hash-seeded pseudo-random unit vector standing in for a text encoder.
std::vector<double> embed_description(std::string_view text, std::size_t dim, std::uint64_t seed);

/// Fourier features of normalised blob parameters, fed to the pooled token.
std::vector<double> fourier_encode(const BlobParams& params, std::size_t height, std::size_t width);

}  // namespace blobdrag
