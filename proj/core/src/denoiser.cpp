#include "blobdrag/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "blobdrag/error.hpp"
#include "blobdrag/rng.hpp"

namespace blobdrag {

namespace {

constexpr std::size_t kTimeFeatures = 16;
constexpr std::size_t kFourierBands = 4;
constexpr std::size_t kFourierFeatures = 5 * 2 * kFourierBands;

struct LayerWeights {
  Matrix in;          // C_lat x C
  Vector in_bias;     // C
  Matrix time;        // kTimeFeatures x C
  Matrix sa_query, sa_key, sa_value, sa_out;  // C x C
  GatedAttentionParams gated;
  Matrix text_proj;   // D_txt x C
  Matrix pos_proj;    // kFourierFeatures x C
  Matrix ca_query;    // C x C
  Matrix ca_key;      // D_txt x C
  Matrix ca_value;    // D_txt x C
  Matrix ca_out;      // C x C
  Vector null_key;    // C
  Vector null_value;  // C
  Matrix mlp_in;      // C x 2C
  Vector mlp_bias;    // 2C
  Matrix mlp_out;     // 2C x C
  std::vector<Matrix> conv;  // 9 taps, C x C_lat
  Vector conv_bias;          // C_lat
};

Vector gaussian_vector(Eigen::Index n, double stddev, std::uint64_t seed) {
  return gaussian_matrix(n, 1, stddev, seed).col(0);
}

Vector time_features(int t) {
  Vector f(static_cast<Eigen::Index>(kTimeFeatures));
  const std::size_t half = kTimeFeatures / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
    f[static_cast<Eigen::Index>(i)] = std::sin(t * freq);
    f[static_cast<Eigen::Index>(i + half)] = std::cos(t * freq);
  }
  return f;
}

Matrix conv3x3(const Matrix& features, std::size_t h, std::size_t w, const std::vector<Matrix>& taps,
               const Vector& bias) {
  const Eigen::Index out_ch = taps.front().cols();
  Matrix out(static_cast<Eigen::Index>(h * w), out_ch);
  out.rowwise() = bias.transpose();
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      auto dst = out.row(static_cast<Eigen::Index>(r * w + c));
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + dy;
          const auto cc = static_cast<std::ptrdiff_t>(c) + dx;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) ||
              cc >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          const auto& tap = taps[static_cast<std::size_t>((dy + 1) * 3 + (dx + 1))];
          dst.noalias() += features.row(rr * static_cast<std::ptrdiff_t>(w) + cc) * tap;
        }
      }
    }
  }
  return out;
}

}  // namespace

struct ToyDenoiser::Weights {
  std::vector<LayerWeights> layers;
  Matrix skip;       // C_lat x C_lat
  Vector skip_bias;  // C_lat
};

void DenoiserSpec::validate() const {
  if (latent_height == 0 || latent_width == 0 || latent_channels == 0) {
    throw InvalidArgument("denoiser spec: empty latent shape");
  }
  if (text_width == 0) throw InvalidArgument("denoiser spec: text width must be positive");
  if (layers.empty()) throw InvalidArgument("denoiser spec: empty layer registry");
  for (const LayerInfo& l : layers) {
    if (l.height == 0 || l.width == 0 || l.channels == 0 || latent_height % l.height != 0 ||
        latent_width % l.width != 0) {
      throw InvalidArgument("denoiser spec: layer " + std::to_string(l.id) +
                            " does not evenly divide the latent grid");
    }
  }
}

Latent Denoiser::predict_noise(const Latent& x_t, int t, std::span<const BlobSpec> blobs) const {
  AttentionHooks identity;
  return predict_noise(x_t, t, blobs, identity);
}

double ToyDenoiser::gate_gamma() { return std::atanh(0.5); }

ToyDenoiser::ToyDenoiser(DenoiserSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  auto w = std::make_shared<Weights>();
  const auto lat = static_cast<Eigen::Index>(spec_.latent_channels);
  const auto txt = static_cast<Eigen::Index>(spec_.text_width);
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerInfo& info = spec_.layers[li];
    const auto c = static_cast<Eigen::Index>(info.channels);
    const std::string tag = "layer" + std::to_string(li) + ".";
    auto seed = [&](const char* name) { return derive_seed(spec_.seed, tag + name); };
    const double inv_c = 1.0 / std::sqrt(static_cast<double>(c));

    LayerWeights lw;
    lw.in = gaussian_matrix(lat, c, 1.0 / std::sqrt(static_cast<double>(lat)), seed("in"));
    lw.in_bias = gaussian_vector(c, 0.1, seed("in_bias"));
    lw.time = gaussian_matrix(static_cast<Eigen::Index>(kTimeFeatures), c, 0.25, seed("time"));
    lw.sa_query = gaussian_matrix(c, c, inv_c, seed("sa_query"));
    lw.sa_key = gaussian_matrix(c, c, inv_c, seed("sa_key"));
    lw.sa_value = gaussian_matrix(c, c, inv_c, seed("sa_value"));
    lw.sa_out = gaussian_matrix(c, c, inv_c, seed("sa_out"));
    lw.gated.query = gaussian_matrix(c, c, inv_c, seed("gsa_query"));
    lw.gated.key = gaussian_matrix(c, c, inv_c, seed("gsa_key"));
    lw.gated.value = gaussian_matrix(c, c, inv_c, seed("gsa_value"));
    lw.gated.out = gaussian_matrix(c, c, inv_c, seed("gsa_out"));
    lw.gated.gamma = gate_gamma();
    lw.text_proj = gaussian_matrix(txt, c, 2.0, seed("text_proj"));
    lw.pos_proj = gaussian_matrix(static_cast<Eigen::Index>(kFourierFeatures), c,
                                  1.0 / std::sqrt(static_cast<double>(kFourierFeatures)), seed("pos_proj"));
    lw.ca_query = gaussian_matrix(c, c, inv_c, seed("ca_query"));
    lw.ca_key = gaussian_matrix(txt, c, 2.0, seed("ca_key"));
    lw.ca_value = gaussian_matrix(txt, c, 2.0, seed("ca_value"));
    lw.ca_out = gaussian_matrix(c, c, inv_c, seed("ca_out"));
    lw.null_key = gaussian_vector(c, 1.0, seed("null_key"));
    lw.null_value = gaussian_vector(c, 0.5, seed("null_value"));
    lw.mlp_in = gaussian_matrix(c, 2 * c, inv_c, seed("mlp_in"));
    lw.mlp_bias = gaussian_vector(2 * c, 0.1, seed("mlp_bias"));
    lw.mlp_out = gaussian_matrix(2 * c, c, inv_c / std::sqrt(2.0), seed("mlp_out"));
    const double conv_std = 1.0 / std::sqrt(9.0 * static_cast<double>(c) * static_cast<double>(spec_.layers.size()));
    for (int tap = 0; tap < 9; ++tap) {
      lw.conv.push_back(gaussian_matrix(c, lat, conv_std,
                                        derive_seed(spec_.seed, tag + "conv", static_cast<std::uint64_t>(tap))));
    }
    lw.conv_bias = gaussian_vector(lat, 0.05, seed("conv_bias"));
    w->layers.push_back(std::move(lw));
  }
  w->skip = gaussian_matrix(lat, lat, 0.3 / std::sqrt(static_cast<double>(lat)), derive_seed(spec_.seed, "skip"));
  w->skip_bias = gaussian_vector(lat, 0.05, derive_seed(spec_.seed, "skip_bias"));
  weights_ = std::move(w);
}

ToyDenoiser::~ToyDenoiser() = default;

Latent ToyDenoiser::predict_noise(const Latent& x_t, int t, std::span<const BlobSpec> blobs,
                                  AttentionHooks& hooks) const {
  if (x_t.height() != spec_.latent_height || x_t.width() != spec_.latent_width ||
      x_t.channels() != spec_.latent_channels) {
    throw InvalidArgument("predict_noise: latent shape does not match the denoiser spec");
  }
  for (const BlobSpec& b : blobs) {
    if (b.embedding.size() != spec_.text_width) {
      throw InvalidArgument("predict_noise: blob embedding width " + std::to_string(b.embedding.size()) +
                            " != text width " + std::to_string(spec_.text_width));
    }
  }
  const auto n_blobs = static_cast<Eigen::Index>(blobs.size());
  Matrix embeddings(n_blobs, static_cast<Eigen::Index>(spec_.text_width));
  Matrix fourier(n_blobs, static_cast<Eigen::Index>(kFourierFeatures));
  for (Eigen::Index i = 0; i < n_blobs; ++i) {
    const BlobSpec& b = blobs[static_cast<std::size_t>(i)];
    embeddings.row(i) = Eigen::Map<const Eigen::RowVectorXd>(b.embedding.data(), embeddings.cols());
    const auto f = fourier_encode(b.params, spec_.latent_height, spec_.latent_width);
    fourier.row(i) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), fourier.cols());
  }

  const Vector temb = time_features(t);
  Latent eps(x_t.height(), x_t.width(), x_t.channels());
  {
    auto eps_tokens = eps.as_tokens();
    eps_tokens = x_t.as_tokens() * weights_->skip;
    eps_tokens.rowwise() += weights_->skip_bias.transpose();
  }

  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerInfo& info = spec_.layers[li];
    const LayerWeights& lw = weights_->layers[li];
    const LayerCall call{t, li, &info};
    const std::size_t cells = info.height * info.width;

    const Latent pooled = average_pool(x_t, info.height, info.width);
    Matrix features = pooled.as_tokens() * lw.in;
    const Eigen::RowVectorXd bias = lw.in_bias.transpose() + temb.transpose() * lw.time;
    features.rowwise() += bias;

    // Self-attention: the layer the editing hooks act on.
    {
      const Matrix query = features * lw.sa_query;
      Matrix keys = features * lw.sa_key;
      Matrix values = features * lw.sa_value;
      hooks.on_self_attention_kv(call, keys, values);
      Matrix output = scaled_dot_product_attention(query, keys, values);
      hooks.on_self_attention_output(call, keys, values, output);
      features += output * lw.sa_out;
    }

    std::vector<Mask> masks;
    masks.reserve(blobs.size());
    for (const BlobSpec& b : blobs) masks.push_back(blob_mask_for_layer(b.params, spec_, info));

    if (kBlockConfig.has_gated_self_attention && n_blobs > 0) {
      TokenBlock block;
      block.height = info.height;
      block.width = info.width;
      block.visual = std::move(features);
      // Pooled blob token: mean of projected text embedding and projected layout code.
      block.textual = 0.5 * (embeddings * lw.text_proj + fourier * lw.pos_proj);
      GatedAttentionResult gsa = hooks.mask_gated_attention()
                                     ? masked_gated_self_attention(block, masks, 1.0, lw.gated)
                                     : gated_self_attention(block, 1.0, lw.gated);
      if (hooks.wants_gated_attention()) hooks.on_gated_attention(call, gsa.map);
      features = std::move(gsa.tokens.visual);
    }

    if (kBlockConfig.has_masked_cross_attention && n_blobs > 0) {
      const Matrix query = features * lw.ca_query;
      const Matrix keys = embeddings * lw.ca_key;
      const Matrix values = embeddings * lw.ca_value;
      const double scale = 1.0 / std::sqrt(static_cast<double>(info.channels));
      Matrix attended(static_cast<Eigen::Index>(cells), features.cols());
      std::vector<double> logits(static_cast<std::size_t>(n_blobs) + 1);
      for (std::size_t j = 0; j < cells; ++j) {
        const auto q = query.row(static_cast<Eigen::Index>(j));
        // Token 0 is the always-visible null token; blob i only inside its ellipse.
        logits[0] = q.dot(lw.null_key) * scale;
        double peak = logits[0];
        for (Eigen::Index i = 0; i < n_blobs; ++i) {
          if (!masks[static_cast<std::size_t>(i)][j]) continue;
          logits[static_cast<std::size_t>(i) + 1] = q.dot(keys.row(i)) * scale;
          peak = std::max(peak, logits[static_cast<std::size_t>(i) + 1]);
        }
        double total = std::exp(logits[0] - peak);
        Eigen::RowVectorXd acc = total * lw.null_value.transpose();
        for (Eigen::Index i = 0; i < n_blobs; ++i) {
          if (!masks[static_cast<std::size_t>(i)][j]) continue;
          const double wgt = std::exp(logits[static_cast<std::size_t>(i) + 1] - peak);
          total += wgt;
          acc += wgt * values.row(i);
        }
        attended.row(static_cast<Eigen::Index>(j)) = acc / total;
      }
      features += attended * lw.ca_out;
    }

    Matrix hidden = features * lw.mlp_in;
    hidden.rowwise() += lw.mlp_bias.transpose();
    features += hidden.array().tanh().matrix() * lw.mlp_out;

    const Matrix out = conv3x3(features, info.height, info.width, lw.conv, lw.conv_bias);
    const Latent up = upsample_nearest(Latent::from_tokens(out, info.height, info.width),
                                       spec_.latent_height, spec_.latent_width);
    auto e = eps.data();
    auto u = up.data();
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += u[i];
  }
  return eps;
}

Mask blob_mask_for_layer(const BlobParams& params, const DenoiserSpec& spec,
                         const LayerInfo& layer) {
  return resize_mask(rasterize_blob(params, spec.latent_height, spec.latent_width), layer.height,
                     layer.width);
}

std::vector<double> embed_description(std::string_view text, std::size_t dim, std::uint64_t seed) {
  if (text.empty()) throw InvalidArgument("embed_description: empty text");
  if (dim == 0) throw InvalidArgument("embed_description: zero dimension");
  GaussianSampler rng(derive_seed(seed, "text", fnv1a64(text)));
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

std::vector<double> fourier_encode(const BlobParams& params, std::size_t height, std::size_t width) {
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  const double raw[5] = {params.cx / w, params.cy / h, params.a / w, params.b / h,
                         params.theta / std::numbers::pi};
  std::vector<double> out;
  out.reserve(kFourierFeatures);
  for (double v : raw) {
    for (std::size_t band = 0; band < kFourierBands; ++band) {
      const double arg = std::ldexp(std::numbers::pi * v, static_cast<int>(band));
      out.push_back(std::sin(arg));
      out.push_back(std::cos(arg));
    }
  }
  return out;
}

}  // namespace blobdrag
