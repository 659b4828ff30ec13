#include <benchmark/benchmark.h>

#include "blobdrag/attnctl.hpp"
#include "blobdrag/blobgeom.hpp"
#include "blobdrag/denoiser.hpp"
#include "blobdrag/pipeline.hpp"
#include "blobdrag/rng.hpp"

using namespace blobdrag;

static void BM_MaskedGatedAttention(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Eigen::Index width = 32;
  const TokenBlock tokens{side, side, gaussian_matrix(side * side, width, 1, 1), gaussian_matrix(3, width, 1, 2)};
  const auto params = GatedAttentionParams::identity(width, 0.5);
  std::vector<Mask> masks;
  for (double cx : {0.25, 0.5, 0.75}) {
    masks.push_back(rasterize_blob({cx * side, 0.5 * side, 0.2 * side, 0.15 * side, 0.3}, side, side));
  }
  for (auto _ : state) benchmark::DoNotOptimize(masked_gated_self_attention(tokens, masks, 1.0, params));
}
BENCHMARK(BM_MaskedGatedAttention)->Arg(8)->Arg(16)->Arg(32);

static void BM_NnCopy(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Matrix anchor = gaussian_matrix(side * side, 32, 1, 3);
  const Matrix source = gaussian_matrix(side * side, 32, 1, 4);
  const Mask dest = rasterize_blob({0.7 * side, 0.5 * side, 0.25 * side, 0.2 * side, 0}, side, side);
  const Mask src = rasterize_blob({0.3 * side, 0.5 * side, 0.25 * side, 0.2 * side, 0}, side, side);
  for (auto _ : state) benchmark::DoNotOptimize(nn_copy(anchor, source, dest, src));
}
BENCHMARK(BM_NnCopy)->Arg(8)->Arg(16)->Arg(32);

static void BM_FitEllipse(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const double s = static_cast<double>(side);
  const Mask target = rasterize_blob({0.5 * s, 0.45 * s, 0.3 * s, 0.15 * s, 0.6}, side, side);
  for (auto _ : state) benchmark::DoNotOptimize(fit_ellipse(target));
}
BENCHMARK(BM_FitEllipse)->Arg(32)->Arg(64)->Arg(128);

static void BM_PredictNoise(benchmark::State& state) {
  const ToyDenoiser model;
  const Latent x = gaussian_latent(32, 32, 8, 5);
  const std::vector<BlobSpec> blobs{{{10, 16, 5, 3, 0.2}, "a", embed_description("a", 64, 1)},
                                    {{24, 20, 4, 4, 0}, "b", embed_description("b", 64, 1)}};
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_noise(x, 10, blobs));
}
BENCHMARK(BM_PredictNoise);

static void BM_EditGenerated(benchmark::State& state) {
  const ToyDenoiser model;
  Scene scene;
  scene.blobs = {{{8, 16, 5, 3.5, 0.3}, "a", embed_description("a", 64, 1)}};
  DragRequest drag;
  drag.target_center = std::pair{24.0, 16.0};
  EditConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(edit_generated(scene, drag, cfg, model));
}
BENCHMARK(BM_EditGenerated)->Arg(10)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
