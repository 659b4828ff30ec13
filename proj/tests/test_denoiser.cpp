#include <cmath>

#include <gtest/gtest.h>

#include "blobdrag/denoiser.hpp"
#include "blobdrag/error.hpp"
#include "blobdrag/rng.hpp"

using namespace blobdrag;

namespace {

const ToyDenoiser& model() {
  static const ToyDenoiser m;
  return m;
}

std::vector<BlobSpec> two_blobs() {
  const std::size_t d = model().spec().text_width;
  return {{{9, 10, 5, 3, 0.4}, "a red ball", embed_description("a red ball", d, 1)},
          {{23, 22, 4, 4, 0}, "a blue cup", embed_description("a blue cup", d, 1)}};
}

class CountingHooks : public AttentionHooks {
 public:
  void on_self_attention_kv(const LayerCall& call, Matrix&, Matrix&) override { kv.push_back(call.layer); }
  void on_self_attention_output(const LayerCall& call, const Matrix&, const Matrix&, Matrix&) override {
    out.push_back(call.layer);
  }
  std::vector<std::size_t> kv, out;
};

}  // namespace

TEST(ToyDenoiser, Deterministic) {
  const Latent x = gaussian_latent(32, 32, 8, 3);
  const auto blobs = two_blobs();
  const Latent a = model().predict_noise(x, 7, blobs);
  EXPECT_EQ(a, model().predict_noise(x, 7, blobs));
  EXPECT_EQ(a, ToyDenoiser().predict_noise(x, 7, blobs));
  EXPECT_NE(a, model().predict_noise(x, 8, blobs));
}

TEST(ToyDenoiser, DifferentSeedDifferentWeights) {
  DenoiserSpec spec;
  spec.seed = 1;
  const Latent x = gaussian_latent(32, 32, 8, 3);
  EXPECT_NE(ToyDenoiser(spec).predict_noise(x, 7, two_blobs()), model().predict_noise(x, 7, two_blobs()));
}

TEST(ToyDenoiser, DisjointBlobPermutation) {
  const Latent x = gaussian_latent(32, 32, 8, 4);
  auto blobs = two_blobs();
  const Latent a = model().predict_noise(x, 12, blobs);
  std::swap(blobs[0], blobs[1]);
  EXPECT_LE(max_abs_diff(a, model().predict_noise(x, 12, blobs)), 1e-12);
}

TEST(ToyDenoiser, ZeroInputBiasFixture) {
  const DenoiserSpec& s = model().spec();
  const std::vector<BlobSpec> blobs{{{16, 16, 6, 4, 0}, "zero", std::vector<double>(s.text_width, 0.0)}};
  const Latent out = model().predict_noise(Latent(32, 32, 8), 10, blobs);
  double sum = 0, sq = 0;
  for (double v : out.data()) {
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum, 1837.9550344315344, 1e-8);
  EXPECT_NEAR(sq, 24486.033478897727, 1e-7);
  EXPECT_NEAR(out.at(0, 0, 0), 0.78974482704540128, 1e-11);
  EXPECT_NEAR(out.at(16, 16, 3), -0.0013062157779172301, 1e-11);
  EXPECT_NEAR(out.at(31, 5, 7), 1.9323637135056091, 1e-11);
}

TEST(ToyDenoiser, HooksCalledForEveryLayerInOrder) {
  CountingHooks hooks;
  model().predict_noise(gaussian_latent(32, 32, 8, 5), 3, two_blobs(), hooks);
  EXPECT_EQ(hooks.kv, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(hooks.out, (std::vector<std::size_t>{0, 1}));
}

TEST(ToyDenoiser, IdentityHooksAreTransparent) {
  const Latent x = gaussian_latent(32, 32, 8, 6);
  CountingHooks hooks;
  EXPECT_EQ(model().predict_noise(x, 9, two_blobs(), hooks), model().predict_noise(x, 9, two_blobs()));
}

TEST(ToyDenoiser, CrossAttentionIsLocal) {
  const DenoiserSpec& spec = model().spec();
  const Latent x = gaussian_latent(32, 32, 8, 7);
  auto blobs = two_blobs();
  const Latent base = model().predict_noise(x, 15, blobs);
  std::fill(blobs[0].embedding.begin(), blobs[0].embedding.end(), 0.0);
  const Latent zeroed = model().predict_noise(x, 15, blobs);

  Mask allowed(32, 32);
  for (const LayerInfo& layer : spec.layers) {
    const Mask grown = dilate(blob_mask_for_layer(blobs[0].params, spec, layer), 3);
    allowed = mask_union(allowed, resize_mask(grown, 32, 32));
  }
  std::size_t changed = 0;
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c)
      for (std::size_t ch = 0; ch < 8; ++ch) {
        if (base.at(r, c, ch) == zeroed.at(r, c, ch)) continue;
        ++changed;
        EXPECT_TRUE(allowed.at(r, c)) << r << "," << c;
      }
  EXPECT_GT(changed, 0u);
}

TEST(ToyDenoiser, ValidatesInputs) {
  EXPECT_THROW(model().predict_noise(Latent(16, 16, 8), 1, two_blobs()), InvalidArgument);
  auto blobs = two_blobs();
  blobs[0].embedding.resize(3);
  EXPECT_THROW(model().predict_noise(Latent(32, 32, 8), 1, blobs), InvalidArgument);
  DenoiserSpec bad;
  bad.layers = {{0, 10, 10, 16}};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  EXPECT_THROW(ToyDenoiser{bad}, InvalidArgument);
}

TEST(ToyDenoiser, GateGamma) { EXPECT_NEAR(std::tanh(ToyDenoiser::gate_gamma()), 0.5, 1e-15); }

TEST(BlobMaskForLayer, ResizesLatentMask) {
  const DenoiserSpec& spec = model().spec();
  const BlobParams p{16, 16, 8, 5, 0.3};
  const Mask m = blob_mask_for_layer(p, spec, spec.layers[1]);
  EXPECT_EQ(m, resize_mask(rasterize_blob(p, 32, 32), 8, 8));
}

TEST(EmbedDescription, DeterministicUnitAndSpread) {
  const auto a = embed_description("a cat", 64, 9);
  EXPECT_EQ(a, embed_description("a cat", 64, 9));
  double norm = 0;
  for (double v : a) norm += v * v;
  EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6);
  const auto b = embed_description("a dog", 64, 9);
  double dot = 0;
  for (std::size_t i = 0; i < 64; ++i) dot += a[i] * b[i];
  EXPECT_LT(std::abs(dot), 0.5);
  EXPECT_NE(a, embed_description("a cat", 64, 10));
  EXPECT_THROW(embed_description("", 64, 9), InvalidArgument);
}

TEST(FourierEncode, FixedWidthAndFinite) {
  const auto f = fourier_encode({16, 16, 8, 4, 0.2}, 32, 32);
  EXPECT_EQ(f.size(), 40u);
  for (double v : f) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_LE(std::abs(v), 1.0);
  }
  EXPECT_NE(f, fourier_encode({17, 16, 8, 4, 0.2}, 32, 32));
}
