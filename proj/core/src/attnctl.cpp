#include "blobdrag/attnctl.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "blobdrag/error.hpp"
#include "blobdrag/schedule.hpp"

namespace blobdrag {

namespace {

// Row-wise softmax over entries where allowed(row, col) holds; the rest get
// exactly zero weight.
template <typename Allowed>
void masked_softmax_rows(Matrix& logits, Allowed allowed) {
  const Eigen::Index n = logits.cols();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (allowed(i, j)) peak = std::max(peak, logits(i, j));
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (allowed(i, j)) {
        logits(i, j) = std::exp(logits(i, j) - peak);
        total += logits(i, j);
      } else {
        logits(i, j) = 0.0;
      }
    }
    const double inv = 1.0 / total;
    for (Eigen::Index j = 0; j < n; ++j) logits(i, j) *= inv;
  }
}

GatedAttentionResult gated_attention_impl(const TokenBlock& tokens, const Mask* masks,
                                          double gate, const GatedAttentionParams& params) {
  const auto k = static_cast<Eigen::Index>(tokens.visual_count());
  const auto n = static_cast<Eigen::Index>(tokens.text_count());
  const Eigen::Index width = tokens.visual.cols();
  if (tokens.height * tokens.width != tokens.visual_count()) {
    throw InvalidArgument("gated self-attention: visual token count != h * w");
  }
  if (n > 0 && tokens.textual.cols() != width) {
    throw InvalidArgument("gated self-attention: text and visual widths differ");
  }
  if (params.query.rows() != width || params.key.rows() != width || params.value.rows() != width ||
      params.out.cols() != width || params.query.cols() != params.key.cols() ||
      params.value.cols() != params.out.rows()) {
    throw InvalidArgument("gated self-attention: projection shapes do not match layer width");
  }

  Matrix unified(k + n, width);
  unified.topRows(k) = tokens.visual;
  if (n > 0) unified.bottomRows(n) = tokens.textual;

  const Matrix q = unified * params.query;
  const Matrix key = unified * params.key;
  const Matrix value = unified * params.value;
  Matrix weights = (q * key.transpose()) / std::sqrt(static_cast<double>(q.cols()));

  if (masks != nullptr) {
    masked_softmax_rows(weights, [&](Eigen::Index i, Eigen::Index j) {
      if (i < k && j >= k) return masks[j - k][static_cast<std::size_t>(i)];
      if (i >= k && j < k) return masks[i - k][static_cast<std::size_t>(j)];
      return true;
    });
  } else {
    masked_softmax_rows(weights, [](Eigen::Index, Eigen::Index) { return true; });
  }

  const Matrix attended = (weights.topRows(k) * value) * params.out;
  GatedAttentionResult result;
  result.tokens.height = tokens.height;
  result.tokens.width = tokens.width;
  result.tokens.visual = tokens.visual + (gate * std::tanh(params.gamma)) * attended;
  result.tokens.textual = tokens.textual;
  result.map.visual_tokens = tokens.visual_count();
  result.map.weights = std::move(weights);
  return result;
}

}  // namespace

GatedAttentionParams GatedAttentionParams::identity(Eigen::Index width, double gamma) {
  GatedAttentionParams p;
  p.query = Matrix::Identity(width, width);
  p.key = Matrix::Identity(width, width);
  p.value = Matrix::Identity(width, width);
  p.out = Matrix::Identity(width, width);
  p.gamma = gamma;
  return p;
}

GatedAttentionResult masked_gated_self_attention(const TokenBlock& tokens,
                                                 std::span<const Mask> blob_masks, double gate,
                                                 const GatedAttentionParams& params) {
  if (blob_masks.size() != tokens.text_count()) {
    throw InvalidArgument("masked gated self-attention: " + std::to_string(blob_masks.size()) +
                          " masks for " + std::to_string(tokens.text_count()) + " text tokens");
  }
  for (const Mask& m : blob_masks) {
    if (m.height() != tokens.height || m.width() != tokens.width) {
      throw InvalidArgument("masked gated self-attention: mask is not at layer resolution");
    }
  }
  return gated_attention_impl(tokens, blob_masks.data(), gate, params);
}

GatedAttentionResult gated_self_attention(const TokenBlock& tokens, double gate,
                                          const GatedAttentionParams& params) {
  return gated_attention_impl(tokens, nullptr, gate, params);
}

Matrix scaled_dot_product_attention(const Matrix& query, const Matrix& keys, const Matrix& values) {
  if (query.cols() != keys.cols() || keys.rows() != values.rows() || keys.rows() == 0) {
    throw InvalidArgument("attention: incompatible query/key/value shapes");
  }
  Matrix weights = (query * keys.transpose()) / std::sqrt(static_cast<double>(query.cols()));
  masked_softmax_rows(weights, [](Eigen::Index, Eigen::Index) { return true; });
  return weights * values;
}

Matrix share_kv(const QueryKeyValue& target, const KeyValue& source) {
  if (source.key.cols() != target.key.cols() || source.value.cols() != target.value.cols() ||
      source.key.rows() != source.value.rows()) {
    throw InvalidArgument("share_kv: source and target key/value widths differ");
  }
  return scaled_dot_product_attention(target.query, source.key, source.value);
}

Matrix soft_anchor(const Matrix& source_out, const Matrix& target_out, int t, int steps) {
  if (source_out.rows() != target_out.rows() || source_out.cols() != target_out.cols()) {
    throw InvalidArgument("soft_anchor: output shapes differ");
  }
  const double f = time_ratio(t, steps).f;
  if (f == 1.0) return source_out;
  return target_out + f * (source_out - target_out);
}

std::vector<std::size_t> nearest_source_cells(const Matrix& anchor, const Matrix& source,
                                              const Mask& dest_region, const Mask& src_region) {
  if (anchor.rows() != source.rows() || anchor.cols() != source.cols()) {
    throw InvalidArgument("nn_copy: anchor and source shapes differ");
  }
  if (!dest_region.same_shape(src_region) ||
      dest_region.cells() != static_cast<std::size_t>(anchor.rows())) {
    throw InvalidArgument("nn_copy: regions must match the feature grid");
  }
  const std::vector<std::size_t> src = src_region.indices();
  if (src.empty()) throw InvalidArgument("nn_copy: source region is empty");

  const Eigen::Index width = source.cols();
  Matrix unit_src(static_cast<Eigen::Index>(src.size()), width);
  std::vector<bool> src_zero(src.size(), false);
  for (std::size_t s = 0; s < src.size(); ++s) {
    const auto row = source.row(static_cast<Eigen::Index>(src[s]));
    const double norm = row.norm();
    src_zero[s] = norm == 0.0;
    unit_src.row(static_cast<Eigen::Index>(s)) = row / (src_zero[s] ? 1.0 : norm);
  }

  std::vector<std::size_t> out;
  for (std::size_t d : dest_region.indices()) {
    const auto row = anchor.row(static_cast<Eigen::Index>(d));
    const double norm = row.norm();
    const Vector unit = norm == 0.0 ? Vector(row.transpose()) : Vector(row.transpose() / norm);
    std::size_t best_idx = src.front();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < src.size(); ++s) {
      double sim = -1.0;
      if (norm != 0.0 && !src_zero[s]) {
        sim = 0.0;
        const double* u = unit_src.row(static_cast<Eigen::Index>(s)).data();
        for (Eigen::Index c = 0; c < width; ++c) sim += unit[c] * u[c];
      }
      if (sim > best) {
        best = sim;
        best_idx = src[s];
      }
    }
    out.push_back(best_idx);
  }
  return out;
}

Matrix nn_copy(const Matrix& anchor, const Matrix& source, const Mask& dest_region,
               const Mask& src_region) {
  const std::vector<std::size_t> nearest =
      nearest_source_cells(anchor, source, dest_region, src_region);
  Matrix out = anchor;
  std::size_t i = 0;
  for (std::size_t d : dest_region.indices()) {
    out.row(static_cast<Eigen::Index>(d)) = source.row(static_cast<Eigen::Index>(nearest[i++]));
  }
  return out;
}

AttentionAggregator::AttentionAggregator(std::size_t text_tokens, std::size_t height,
                                         std::size_t width)
    : height_(height), width_(width), sums_(text_tokens, Latent(height, width, 1)) {
  if (height == 0 || width == 0) throw InvalidArgument("attention aggregator: empty canonical grid");
}

void AttentionAggregator::add(const AttentionMap& map) {
  const std::size_t k = map.visual_tokens;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(k))));
  if (k == 0 || side * side != k) {
    throw InvalidArgument("reshaped attention: visual token count " + std::to_string(k) +
                          " is not a square");
  }
  if (static_cast<std::size_t>(map.weights.rows()) != k + sums_.size() ||
      map.weights.cols() != map.weights.rows()) {
    throw InvalidArgument("reshaped attention: map does not match the text-token count");
  }
  for (std::size_t i = 0; i < sums_.size(); ++i) {
    Latent grid(side, side, 1);
    const auto row = map.weights.row(static_cast<Eigen::Index>(k + i));
    for (std::size_t v = 0; v < k; ++v) grid.data()[v] = row[static_cast<Eigen::Index>(v)];
    const Latent resized = resize_bilinear(grid, height_, width_);
    auto dst = sums_[i].data();
    auto src = resized.data();
    for (std::size_t v = 0; v < dst.size(); ++v) dst[v] += src[v];
  }
  ++count_;
}

Latent AttentionAggregator::mean(std::size_t token_index) const {
  if (token_index >= sums_.size()) throw InvalidArgument("reshaped attention: token index out of range");
  if (count_ == 0) throw InvalidArgument("reshaped attention: no maps aggregated");
  Latent out = sums_[token_index];
  const double inv = 1.0 / static_cast<double>(count_);
  for (double& v : out.data()) v *= inv;
  return out;
}

Latent aggregate_reshaped_attention(std::span<const AttentionMap> maps, std::size_t token_index,
                                    std::pair<std::size_t, std::size_t> canonical) {
  if (maps.empty()) throw InvalidArgument("reshaped attention: no maps");
  const auto text = static_cast<std::size_t>(maps.front().weights.rows()) - maps.front().visual_tokens;
  AttentionAggregator agg(text, canonical.first, canonical.second);
  for (const AttentionMap& m : maps) agg.add(m);
  return agg.mean(token_index);
}

void AttentionTrace::put(int step, std::size_t layer, AttentionRecord record) {
  records_.insert_or_assign({step, layer}, std::move(record));
}

const AttentionRecord* AttentionTrace::find(int step, std::size_t layer) const {
  const auto it = records_.find({step, layer});
  return it == records_.end() ? nullptr : &it->second;
}

const AttentionRecord& AttentionTrace::at(int step, std::size_t layer) const {
  const AttentionRecord* r = find(step, layer);
  if (r == nullptr) {
    throw InvalidArgument("attention trace has no record for step " + std::to_string(step) +
                          ", layer " + std::to_string(layer));
  }
  return *r;
}

bool AttentionTrace::complete(int steps, std::size_t layers) const {
  if (records_.size() != static_cast<std::size_t>(steps) * layers) return false;
  for (int t = 1; t <= steps; ++t) {
    for (std::size_t l = 0; l < layers; ++l) {
      if (find(t, l) == nullptr) return false;
    }
  }
  return true;
}

}  // namespace blobdrag
