#include "blobdrag/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "blobdrag/error.hpp"

namespace blobdrag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kBftMagic[4] = {'B', 'F', 'T', '1'};
constexpr std::size_t kMaxRank = 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  return bytes;
}

void write_bytes(const fs::path& path, const std::string& header, const std::vector<std::uint8_t>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::uint8_t to_byte(double v, double lo, double hi) {
  if (!(hi > lo)) return 0;
  const double scaled = (v - lo) / (hi - lo) * 255.0;
  return static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L));
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(where + "." + key + ": missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return field<T>(j, key, where);
}

}  // namespace

std::vector<std::uint8_t> encode_bft(const BftTensor& t) {
  if (t.dims.size() > kMaxRank) throw InvalidArgument("bft: rank above 4");
  std::size_t count = 1;
  for (std::uint32_t d : t.dims) count *= d;
  if (count != t.values.size()) throw InvalidArgument("bft: payload size does not match dims");
  std::vector<std::uint8_t> out(std::begin(kBftMagic), std::end(kBftMagic));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (std::uint32_t d : t.dims) put_u32(out, d);
  out.reserve(out.size() + 4 * count);
  for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

BftTensor decode_bft(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 5 || !std::equal(std::begin(kBftMagic), std::end(kBftMagic), bytes.begin())) {
    throw IoError("bft: bad magic");
  }
  const std::size_t rank = bytes[4];
  if (rank > kMaxRank) throw IoError("bft: rank above 4");
  if (bytes.size() < 5 + 4 * rank) throw IoError("bft: truncated header");
  BftTensor t;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims.push_back(get_u32(&bytes[5 + 4 * i]));
    count *= t.dims.back();
  }
  const std::size_t offset = 5 + 4 * rank;
  if (bytes.size() - offset != 4 * count) throw IoError("bft: payload length does not match dims");
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) t.values[i] = std::bit_cast<float>(get_u32(&bytes[offset + 4 * i]));
  return t;
}

void write_bft(const fs::path& path, const BftTensor& t) { write_bytes(path, {}, encode_bft(t)); }

BftTensor read_bft(const fs::path& path) { return decode_bft(read_bytes(path)); }

BftTensor to_bft(const Latent& x) {
  BftTensor t;
  t.dims = {static_cast<std::uint32_t>(x.height()), static_cast<std::uint32_t>(x.width()),
            static_cast<std::uint32_t>(x.channels())};
  t.values.reserve(x.size());
  for (double v : x.data()) t.values.push_back(static_cast<float>(v));
  return t;
}

BftTensor to_bft(const Matrix& m) {
  BftTensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.values.push_back(static_cast<float>(m.data()[i]));
  return t;
}

Latent latent_from_bft(const BftTensor& t) {
  if (t.dims.size() < 2 || t.dims.size() > 3) throw IoError("bft: latent must be rank 2 or 3");
  const std::size_t channels = t.dims.size() == 3 ? t.dims[2] : 1;
  Latent x(t.dims[0], t.dims[1], channels);
  std::copy(t.values.begin(), t.values.end(), x.data().begin());
  return x;
}

void write_latent(const fs::path& path, const Latent& x) { write_bft(path, to_bft(x)); }

Latent read_latent(const fs::path& path) { return latent_from_bft(read_bft(path)); }

void write_mask_pgm(const fs::path& path, const Mask& m) {
  std::vector<std::uint8_t> body(m.cells());
  for (std::size_t i = 0; i < m.cells(); ++i) body[i] = m[i] ? 255 : 0;
  write_bytes(path, "P5\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n", body);
}

Mask read_mask_pgm(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError("pgm: malformed header in " + path.string());
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw IoError("pgm: dimension too large");
      ++pos;
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw IoError("pgm: not a binary P5 file: " + path.string());
  pos = 2;
  const std::size_t width = number();
  const std::size_t height = number();
  const std::size_t maxval = number();
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255) throw IoError("pgm: unsupported header");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("pgm: malformed header");
  ++pos;
  if (bytes.size() - pos < width * height) throw IoError("pgm: truncated pixel data");
  Mask m(height, width);
  for (std::size_t i = 0; i < width * height; ++i) {
    if (bytes[pos + i] != 0) m.set(i / width, i % width);
  }
  return m;
}

void write_heatmap_pgm(const fs::path& path, const Latent& x, std::size_t channel) {
  if (channel >= x.channels()) throw InvalidArgument("heatmap: channel out of range");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < x.cells(); ++i) {
    lo = std::min(lo, x.data()[i * x.channels() + channel]);
    hi = std::max(hi, x.data()[i * x.channels() + channel]);
  }
  std::vector<std::uint8_t> body(x.cells());
  for (std::size_t i = 0; i < x.cells(); ++i) body[i] = to_byte(x.data()[i * x.channels() + channel], lo, hi);
  write_bytes(path, "P5\n" + std::to_string(x.width()) + " " + std::to_string(x.height()) + "\n255\n", body);
}

void write_preview_ppm(const fs::path& path, const Latent& x) {
  if (x.empty()) throw InvalidArgument("preview: empty latent");
  std::vector<std::uint8_t> body(x.cells() * 3);
  for (std::size_t out_ch = 0; out_ch < 3; ++out_ch) {
    const std::size_t ch = std::min(out_ch, x.channels() - 1);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < x.cells(); ++i) {
      lo = std::min(lo, x.data()[i * x.channels() + ch]);
      hi = std::max(hi, x.data()[i * x.channels() + ch]);
    }
    for (std::size_t i = 0; i < x.cells(); ++i) body[i * 3 + out_ch] = to_byte(x.data()[i * x.channels() + ch], lo, hi);
  }
  write_bytes(path, "P6\n" + std::to_string(x.width()) + " " + std::to_string(x.height()) + "\n255\n", body);
}

void to_json(json& j, const BlobParams& p) {
  j = json{{"cx", p.cx}, {"cy", p.cy}, {"a", p.a}, {"b", p.b}, {"theta", p.theta}};
}

void from_json(const json& j, BlobParams& p) {
  p.cx = field<double>(j, "cx", "params");
  p.cy = field<double>(j, "cy", "params");
  p.a = field<double>(j, "a", "params");
  p.b = field<double>(j, "b", "params");
  p.theta = field<double>(j, "theta", "params");
}

void to_json(json& j, const LayerInfo& l) {
  j = json{{"id", l.id}, {"height", l.height}, {"width", l.width}, {"channels", l.channels}};
}

void from_json(const json& j, LayerInfo& l) {
  l.id = field<int>(j, "id", "layer");
  l.height = field<std::size_t>(j, "height", "layer");
  l.width = field<std::size_t>(j, "width", "layer");
  l.channels = field<std::size_t>(j, "channels", "layer");
}

void to_json(json& j, const DenoiserSpec& s) {
  j = json{{"latent_shape", {s.latent_height, s.latent_width, s.latent_channels}},
           {"layers", s.layers},
           {"text_width", s.text_width},
           {"seed", s.seed}};
}

void from_json(const json& j, DenoiserSpec& s) {
  const auto shape = field<std::vector<std::size_t>>(j, "latent_shape", "denoiser");
  if (shape.size() != 3) throw ValidationError("denoiser.latent_shape: expected [H, W, C]");
  s.latent_height = shape[0];
  s.latent_width = shape[1];
  s.latent_channels = shape[2];
  s.layers = field<std::vector<LayerInfo>>(j, "layers", "denoiser");
  s.text_width = field<std::size_t>(j, "text_width", "denoiser");
  s.seed = field<std::uint64_t>(j, "seed", "denoiser");
}

void to_json(json& j, const EditConfig& c) {
  j = json{{"steps", c.steps},
           {"rho", c.rho ? json(*c.rho) : json(nullptr)},
           {"dilation", c.dilation ? json(*c.dilation) : json(nullptr)},
           {"seed", c.seed},
           {"beta_start", c.beta_start},
           {"beta_end", c.beta_end},
           {"parallel_streams", c.parallel_streams},
           {"mask_gated_self_attention", c.mask_gated_self_attention}};
}

void from_json(const json& j, EditConfig& c) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  const EditConfig defaults;
  c.steps = optional_field<int>(j, "steps", "config").value_or(defaults.steps);
  c.rho = optional_field<int>(j, "rho", "config");
  c.dilation = optional_field<int>(j, "dilation", "config");
  c.seed = optional_field<std::uint64_t>(j, "seed", "config").value_or(defaults.seed);
  c.beta_start = optional_field<double>(j, "beta_start", "config").value_or(defaults.beta_start);
  c.beta_end = optional_field<double>(j, "beta_end", "config").value_or(defaults.beta_end);
  c.parallel_streams = optional_field<bool>(j, "parallel_streams", "config").value_or(defaults.parallel_streams);
  c.mask_gated_self_attention =
      optional_field<bool>(j, "mask_gated_self_attention", "config").value_or(defaults.mask_gated_self_attention);
}

void to_json(json& j, const EvalReport& r) {
  j = json{{"foreground", r.foreground}, {"traces", r.traces}, {"kid", r.kid}};
}

json schedule_to_json(const NoiseSchedule& s) {
  return json{{"T", s.steps()}, {"beta_start", s.beta_start()}, {"beta_end", s.beta_end()}};
}

NoiseSchedule schedule_from_json(const json& j) {
  try {
    return make_schedule(field<int>(j, "T", "schedule"), field<double>(j, "beta_start", "schedule"),
                         field<double>(j, "beta_end", "schedule"));
  } catch (const InvalidArgument& e) {
    throw ValidationError(std::string("schedule: ") + e.what());
  }
}

DragRequest drag_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("drag: expected a JSON object");
  DragRequest d;
  d.source_blob_index = field<std::size_t>(j, "source_blob_index", "drag");
  if (j.contains("target_params")) {
    d.target_params = field<BlobParams>(j, "target_params", "drag");
  } else if (j.contains("target_center")) {
    const json& c = j.at("target_center");
    d.target_center = std::pair{field<double>(c, "cx", "drag.target_center"),
                                field<double>(c, "cy", "drag.target_center")};
  } else {
    throw ValidationError("drag: either target_params or target_center is required");
  }
  return d;
}

json drag_to_json(const DragRequest& d) {
  json j{{"source_blob_index", d.source_blob_index}};
  if (d.target_params) j["target_params"] = *d.target_params;
  if (d.target_center) j["target_center"] = {{"cx", d.target_center->first}, {"cy", d.target_center->second}};
  return j;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Scene read_scene(const fs::path& path, std::size_t text_width, std::uint64_t seed) {
  const json j = read_json(path);
  Scene scene;
  const auto blobs = field<json>(j, "blobs", "scene");
  if (!blobs.is_array()) throw ValidationError("scene.blobs: expected an array");
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const std::string where = "scene.blobs[" + std::to_string(i) + "]";
    BlobSpec spec;
    spec.params = field<BlobParams>(blobs[i], "params", where);
    spec.description = field<std::string>(blobs[i], "description", where);
    if (spec.description.empty()) throw ValidationError(where + ".description: empty");
    spec.embedding = embed_description(spec.description, text_width, seed);
    scene.blobs.push_back(std::move(spec));
  }
  const auto provenance = optional_field<std::string>(j, "provenance", "scene").value_or("generated");
  if (provenance == "generated") {
    scene.provenance = Provenance::generated;
  } else if (provenance == "real") {
    scene.provenance = Provenance::real;
  } else {
    throw ValidationError("scene.provenance: expected \"generated\" or \"real\"");
  }
  if (const auto latent = optional_field<std::string>(j, "latent", "scene")) {
    fs::path latent_path(*latent);
    if (latent_path.is_relative()) latent_path = path.parent_path() / latent_path;
    scene.latent = read_latent(latent_path);
  }
  return scene;
}

void write_scene(const fs::path& path, const Scene& scene, const std::string& latent_file) {
  json blobs = json::array();
  for (const BlobSpec& b : scene.blobs) blobs.push_back({{"params", b.params}, {"description", b.description}});
  json j{{"blobs", blobs},
         {"provenance", scene.provenance == Provenance::real ? "real" : "generated"}};
  if (!latent_file.empty()) j["latent"] = latent_file;
  write_json(path, j);
}

}  // namespace blobdrag
