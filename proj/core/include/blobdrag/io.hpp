#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blobdrag/blobgeom.hpp"
#include "blobdrag/denoiser.hpp"
#include "blobdrag/eval.hpp"
#include "blobdrag/pipeline.hpp"
#include "blobdrag/schedule.hpp"
#include "blobdrag/tensor.hpp"

namespace blobdrag {

/// Dense float tensor as stored in a .bft container: "BFT1", u8 rank (<= 4),
/// rank x u32 LE dims, row-major f32 LE payload.
struct BftTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_bft(const BftTensor& t);
BftTensor decode_bft(const std::vector<std::uint8_t>& bytes);
void write_bft(const std::filesystem::path& path, const BftTensor& t);
BftTensor read_bft(const std::filesystem::path& path);

/// Latents go through .bft as rank-3 H x W x C; values are rounded to float.
BftTensor to_bft(const Latent& x);
Latent latent_from_bft(const BftTensor& t);
void write_latent(const std::filesystem::path& path, const Latent& x);
Latent read_latent(const std::filesystem::path& path);
BftTensor to_bft(const Matrix& m);

/// Binary PGM (P5, maxval 255); any nonzero byte reads as true.
void write_mask_pgm(const std::filesystem::path& path, const Mask& m);
Mask read_mask_pgm(const std::filesystem::path& path);

/// Single-channel heatmap, linearly rescaled to [0, 255].
void write_heatmap_pgm(const std::filesystem::path& path, const Latent& x,
                       std::size_t channel = 0);

/// P6 preview of the first three channels, each rescaled to [0, 255].
void write_preview_ppm(const std::filesystem::path& path, const Latent& x);

void to_json(nlohmann::json& j, const BlobParams& p);
void from_json(const nlohmann::json& j, BlobParams& p);
void to_json(nlohmann::json& j, const LayerInfo& l);
void from_json(const nlohmann::json& j, LayerInfo& l);
void to_json(nlohmann::json& j, const DenoiserSpec& s);
void from_json(const nlohmann::json& j, DenoiserSpec& s);
void to_json(nlohmann::json& j, const EditConfig& c);
void from_json(const nlohmann::json& j, EditConfig& c);
void to_json(nlohmann::json& j, const EvalReport& r);

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

DragRequest drag_from_json(const nlohmann::json& j);
nlohmann::json drag_to_json(const DragRequest& d);

/// Scene file: {"blobs":[{"params":{...},"description":"..."}],
/// "latent":"path.bft","provenance":"generated"|"real"}. Relative latent
/// paths resolve against the scene file's directory. Embeddings are
/// recomputed from descriptions with the given width and seed.
Scene read_scene(const std::filesystem::path& path, std::size_t text_width, std::uint64_t seed);
void write_scene(const std::filesystem::path& path, const Scene& scene,
                 const std::string& latent_file);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace blobdrag
