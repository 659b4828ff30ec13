#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "blobdrag/blobgeom.hpp"
#include "blobdrag/tensor.hpp"

namespace blobdrag {

/// Visual tokens (one row per grid cell, row-major over h x w) plus one
/// projected text token per blob. Both share the layer width C.
struct TokenBlock {
  std::size_t height = 0;
  std::size_t width = 0;
  Matrix visual;   // (h*w) x C
  Matrix textual;  // n_blob x C

  std::size_t visual_count() const { return static_cast<std::size_t>(visual.rows()); }
  std::size_t text_count() const { return static_cast<std::size_t>(textual.rows()); }
};

/// Post-softmax weights over the unified token set [visual..., textual...].
struct AttentionMap {
  std::size_t visual_tokens = 0;
  Matrix weights;
};

/// Learned pieces of a gated self-attention layer. gamma is the gate
/// scalar; the residual is scaled by gate * tanh(gamma).
struct GatedAttentionParams {
  Matrix query;
  Matrix key;
  Matrix value;
  Matrix out;
  double gamma = 0.0;

  static GatedAttentionParams identity(Eigen::Index width, double gamma);
};

struct GatedAttentionResult {
  TokenBlock tokens;
  AttentionMap map;
};

/// Gated self-attention over V u T where text token i may only exchange
/// attention with visual cells inside blob_masks[i] (both directions).
/// Masks must already be at the block's h x w.
GatedAttentionResult masked_gated_self_attention(const TokenBlock& tokens,
                                                 std::span<const Mask> blob_masks, double gate,
                                                 const GatedAttentionParams& params);

/// The same layer with no masking.
GatedAttentionResult gated_self_attention(const TokenBlock& tokens, double gate,
                                          const GatedAttentionParams& params);

/// softmax(Q K^T / sqrt(d)) V, row-wise with max subtraction.
Matrix scaled_dot_product_attention(const Matrix& query, const Matrix& keys, const Matrix& values);

struct QueryKeyValue {
  Matrix query;
  Matrix key;
  Matrix value;
};

struct KeyValue {
  Matrix key;
  Matrix value;
};

/// Target queries attend over the source stream's keys and values; the
/// target's own keys/values are discarded.
Matrix share_kv(const QueryKeyValue& target, const KeyValue& source);

/// f * O_s + (1 - f) * O_d with f = t / T.
Matrix soft_anchor(const Matrix& source_out, const Matrix& target_out, int t, int steps);

/// For every cell of dest_region, the row-major index of the src_region cell
/// of `source` with the highest cosine similarity to `anchor`'s row. Ties go
/// to the lowest index; a zero-norm vector scores -1 against everything.
std::vector<std::size_t> nearest_source_cells(const Matrix& anchor, const Matrix& source,
                                              const Mask& dest_region, const Mask& src_region);

/// Replaces anchor rows inside dest_region by their cosine-nearest source rows
/// from src_region. Rows outside dest_region are returned untouched.
Matrix nn_copy(const Matrix& anchor, const Matrix& source, const Mask& dest_region,
               const Mask& src_region);

/// Running mean of "reshaped attention": the row of one text token over the
/// visual tokens, reshaped to sqrt(K) x sqrt(K) and bilinearly resized to a
/// canonical grid.
class AttentionAggregator {
 public:
  AttentionAggregator(std::size_t text_tokens, std::size_t height, std::size_t width);

  void add(const AttentionMap& map);

  std::size_t count() const { return count_; }
  std::size_t text_tokens() const { return sums_.size(); }

  /// Mean map for one text token as an h x w x 1 latent.
  Latent mean(std::size_t token_index) const;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t count_ = 0;
  std::vector<Latent> sums_;
};

Latent aggregate_reshaped_attention(std::span<const AttentionMap> maps, std::size_t token_index,
                                    std::pair<std::size_t, std::size_t> canonical);

/// Keys, values and self-attention output of one layer at one step.
struct AttentionRecord {
  Matrix keys;
  Matrix values;
  Matrix output;
};

/// Per-(step, layer) records captured from one denoising stream.
class AttentionTrace {
 public:
  void put(int step, std::size_t layer, AttentionRecord record);
  const AttentionRecord* find(int step, std::size_t layer) const;
  const AttentionRecord& at(int step, std::size_t layer) const;

  std::size_t size() const { return records_.size(); }
  bool complete(int steps, std::size_t layers) const;

 private:
  std::map<std::pair<int, std::size_t>, AttentionRecord> records_;
};

}  // namespace blobdrag
