#include "blobdrag/pipeline.hpp"

#include <cmath>
#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

#include "blobdrag/error.hpp"
#include "blobdrag/rng.hpp"

namespace blobdrag {

namespace {

std::string blob_label(std::size_t i) { return "blobs[" + std::to_string(i) + "]"; }

// Source-stream records published per (step, layer); the target blocks
// until the record it needs exists.
class TraceChannel {
 public:
  void publish(int step, std::size_t layer, AttentionRecord record) {
    {
      std::lock_guard lock(mutex_);
      trace_.put(step, layer, std::move(record));
    }
    ready_.notify_all();
  }

  const AttentionRecord& wait(int step, std::size_t layer) {
    std::unique_lock lock(mutex_);
    const AttentionRecord* found = nullptr;
    ready_.wait(lock, [&] {
      found = trace_.find(step, layer);
      return found != nullptr || aborted_;
    });
    if (found == nullptr) throw std::runtime_error("source stream aborted");
    return *found;
  }

  void abort() {
    {
      std::lock_guard lock(mutex_);
      aborted_ = true;
    }
    ready_.notify_all();
  }

  AttentionTrace take() {
    std::lock_guard lock(mutex_);
    return std::move(trace_);
  }

 private:
  std::mutex mutex_;
  std::condition_variable ready_;
  AttentionTrace trace_;
  bool aborted_ = false;
};

class RecordingHooks final : public AttentionHooks {
 public:
  RecordingHooks(TraceChannel& channel, bool mask) : channel_(channel), mask_(mask) {}

  bool mask_gated_attention() const override { return mask_; }

  void on_self_attention_output(const LayerCall& call, const Matrix& keys, const Matrix& values,
                                Matrix& output) override {
    channel_.publish(call.step, call.layer, AttentionRecord{keys, values, output});
  }

 private:
  TraceChannel& channel_;
  bool mask_;
};

// Target stream: shares source keys/values, then soft-anchors or
// nearest-neighbour copies the attention output depending on the step.
class TargetHooks final : public AttentionHooks {
 public:
  TargetHooks(TraceChannel& channel, const EditConfig& cfg, std::vector<Mask> dest,
              std::vector<Mask> src, AttentionAggregator& maps)
      : channel_(channel), steps_(cfg.steps), rho_(cfg.effective_rho()),
        mask_(cfg.mask_gated_self_attention), dest_(std::move(dest)), src_(std::move(src)),
        maps_(maps) {
    stats.kv_shares.assign(dest_.size(), 0);
    stats.soft_anchors.assign(dest_.size(), 0);
    stats.nn_copies.assign(dest_.size(), 0);
  }

  bool mask_gated_attention() const override { return mask_; }
  bool wants_gated_attention() const override { return true; }

  void on_self_attention_kv(const LayerCall& call, Matrix& keys, Matrix& values) override {
    const AttentionRecord& source = channel_.wait(call.step, call.layer);
    if (source.keys.cols() != keys.cols() || source.values.cols() != values.cols()) {
      throw InvalidArgument("share_kv: source and target key/value widths differ");
    }
    keys = source.keys;
    values = source.values;
    ++stats.kv_shares[call.layer];
  }

  void on_self_attention_output(const LayerCall& call, const Matrix& /*keys*/,
                                const Matrix& /*values*/, Matrix& output) override {
    const AttentionRecord& source = channel_.wait(call.step, call.layer);
    if (call.step > steps_ - rho_) {
      output = soft_anchor(source.output, output, call.step, steps_);
      ++stats.soft_anchors[call.layer];
    } else {
      output = nn_copy(output, source.output, dest_[call.layer], src_[call.layer]);
      ++stats.nn_copies[call.layer];
    }
  }

  void on_gated_attention(const LayerCall& /*call*/, const AttentionMap& map) override {
    maps_.add(map);
  }

  EditStats stats;

 private:
  TraceChannel& channel_;
  int steps_;
  int rho_;
  bool mask_;
  std::vector<Mask> dest_;
  std::vector<Mask> src_;
  AttentionAggregator& maps_;
};


Latent denoise(const Denoiser& model, Latent x, std::span<const BlobSpec> blobs,
               const NoiseSchedule& schedule, AttentionHooks& hooks,
               const std::function<void(Latent&, int)>& blend = {}) {
  for (int t = schedule.steps(); t >= 1; --t) {
    const Latent eps = model.predict_noise(x, t, blobs, hooks);
    x = ddim_step(x, eps, t, t - 1, schedule);
    if (blend) blend(x, t - 1);
  }
  return x;
}

// Runs `source` and `target` either on two threads joined by the channel's
// rendezvous, or one after the other.
template <typename Source, typename Target>
void run_streams(bool parallel, TraceChannel& channel, Source&& source, Target&& target) {
  if (!parallel) {
    source();
    target();
    return;
  }
  std::exception_ptr source_error;
  std::thread worker([&] {
    try {
      source();
    } catch (...) {
      source_error = std::current_exception();
      channel.abort();
    }
  });
  std::exception_ptr target_error;
  try {
    target();
  } catch (...) {
    target_error = std::current_exception();
  }
  worker.join();
  if (source_error) std::rethrow_exception(source_error);
  if (target_error) std::rethrow_exception(target_error);
}

struct PreparedEdit {
  BlobParams source_params;
  BlobParams target_params;
  std::vector<BlobSpec> target_blobs;
  std::vector<Mask> dest_masks;
  std::vector<Mask> src_masks;
};

PreparedEdit prepare(const Scene& scene, const DragRequest& drag, const EditConfig& cfg,
                     const DenoiserSpec& spec) {
  scene.validate(spec);
  cfg.validate(spec.latent_height);
  PreparedEdit p;
  p.target_params = drag.resolve(scene, spec);
  p.source_params = scene.blobs[drag.source_blob_index].params;
  p.target_blobs = scene.blobs;
  p.target_blobs[drag.source_blob_index].params = p.target_params;
  for (const LayerInfo& layer : spec.layers) {
    p.dest_masks.push_back(blob_mask_for_layer(p.target_params, spec, layer));
    p.src_masks.push_back(blob_mask_for_layer(p.source_params, spec, layer));
    if (p.src_masks.back().empty()) {
      throw ValidationError("source blob covers no cell at layer " + std::to_string(layer.id) + " (" +
                            std::to_string(layer.height) + "x" + std::to_string(layer.width) + ")");
    }
  }
  return p;
}

std::vector<Latent> collect_maps(const AttentionAggregator& agg) {
  std::vector<Latent> out;
  if (agg.count() == 0) return out;
  for (std::size_t i = 0; i < agg.text_tokens(); ++i) out.push_back(agg.mean(i));
  return out;
}

void bucket_into(TraceChannel& channel, const Latent& real_latent, const Scene& scene,
                 const EditConfig& cfg, const NoiseSchedule& schedule, const Denoiser& model) {
  RecordingHooks hooks(channel, cfg.mask_gated_self_attention);
  // Descending so a concurrent target stream can start on step T immediately.
  for (int t = schedule.steps(); t >= 1; --t) {
    const Latent noisy = forward_noise(real_latent, t, bucket_noise(real_latent, cfg.seed, t), schedule);
    (void)model.predict_noise(noisy, t, scene.blobs, hooks);
  }
}

}  // namespace

void Scene::validate(const DenoiserSpec& spec) const {
  if (blobs.empty()) throw ValidationError("scene.blobs: at least one blob is required");
  const double h = static_cast<double>(spec.latent_height);
  const double w = static_cast<double>(spec.latent_width);
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const BlobParams& p = blobs[i].params;
    if (!(p.a > 0.0) || !(p.b > 0.0)) throw ValidationError(blob_label(i) + ".params: radii must be positive");
    if (!(p.cx >= 0.0 && p.cx <= w && p.cy >= 0.0 && p.cy <= h)) {
      throw ValidationError(blob_label(i) + ".params: centre outside the grid");
    }
    if (blobs[i].embedding.size() != spec.text_width) {
      throw ValidationError(blob_label(i) + ".embedding: width " + std::to_string(blobs[i].embedding.size()) +
                            " != " + std::to_string(spec.text_width));
    }
  }
  const bool shape_ok = latent.height() == spec.latent_height && latent.width() == spec.latent_width &&
                        latent.channels() == spec.latent_channels;
  if (provenance == Provenance::real && !shape_ok) {
    throw ValidationError("scene.latent: real scenes need a latent of the denoiser's shape");
  }
  if (provenance == Provenance::generated && !latent.empty() && !shape_ok) {
    throw ValidationError("scene.latent: initial noise does not match the denoiser's shape");
  }
}

BlobParams DragRequest::resolve(const Scene& scene, const DenoiserSpec& spec) const {
  if (source_blob_index >= scene.blobs.size()) {
    throw ValidationError("drag.source_blob_index: " + std::to_string(source_blob_index) +
                          " out of range for " + std::to_string(scene.blobs.size()) + " blobs");
  }
  BlobParams target = scene.blobs[source_blob_index].params;
  if (target_params) {
    target = *target_params;
  } else if (target_center) {
    target.cx = target_center->first;
    target.cy = target_center->second;
  } else {
    throw ValidationError("drag: either target_params or target_center is required");
  }
  if (!(target.a > 0.0) || !(target.b > 0.0)) throw ValidationError("drag.target: radii must be positive");
  if (!(target.cx >= 0.0 && target.cx <= static_cast<double>(spec.latent_width) && target.cy >= 0.0 &&
        target.cy <= static_cast<double>(spec.latent_height))) {
    throw ValidationError("drag.target: centre outside the grid");
  }
  return target;
}

int EditConfig::effective_rho() const { return rho.value_or(steps / 2); }

int EditConfig::effective_dilation(std::size_t latent_height) const {
  return dilation.value_or(scaled_dilation_kernel(latent_height));
}

void EditConfig::validate(std::size_t latent_height) const {
  if (steps < 2) throw ValidationError("config.steps: must be >= 2");
  const int r = effective_rho();
  if (r < 1 || r > steps) throw ValidationError("config.rho: must lie in [1, steps]");
  const int k = effective_dilation(latent_height);
  if (k < 1 || k % 2 == 0) throw ValidationError("config.dilation: must be odd and >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError("config.beta_start/beta_end: need 0 < start <= end < 1");
  }
}

int scaled_dilation_kernel(std::size_t height) {
  const double v = 50.0 * static_cast<double>(height) / 512.0;
  const long m = std::max(0L, std::lround((v - 1.0) / 2.0));
  return static_cast<int>(2 * m + 1);
}

EditResult edit_generated(const Scene& scene, const DragRequest& drag, const EditConfig& cfg,
                          const Denoiser& model) {
  const DenoiserSpec& spec = model.spec();
  if (scene.provenance != Provenance::generated) {
    throw ValidationError("scene.provenance: edit_generated needs a generated scene");
  }
  PreparedEdit prep = prepare(scene, drag, cfg, spec);
  const NoiseSchedule schedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
  const Latent initial = scene.latent.empty()
                             ? gaussian_latent(spec.latent_height, spec.latent_width, spec.latent_channels,
                                               derive_seed(cfg.seed, "init"))
                             : scene.latent;

  TraceChannel channel;
  AttentionAggregator maps(scene.blobs.size(), spec.latent_height, spec.latent_width);
  RecordingHooks source_hooks(channel, cfg.mask_gated_self_attention);
  TargetHooks target_hooks(channel, cfg, prep.dest_masks, prep.src_masks, maps);

  EditResult result;
  run_streams(
      cfg.parallel_streams, channel,
      [&] { result.source = denoise(model, initial, scene.blobs, schedule, source_hooks); },
      [&] { result.edited = denoise(model, initial, prep.target_blobs, schedule, target_hooks); });
  result.stats = std::move(target_hooks.stats);
  result.attention_maps = collect_maps(maps);
  return result;
}

Latent bucket_noise(const Latent& like, std::uint64_t seed, int t) {
  return gaussian_latent(like.height(), like.width(), like.channels(),
                         derive_seed(seed, "bucket", static_cast<std::uint64_t>(t)));
}

AttentionTrace ddpm_bucket(const Latent& real_latent, const Scene& scene, const EditConfig& cfg,
                           const Denoiser& model) {
  if (scene.provenance != Provenance::real) {
    throw ValidationError("scene.provenance: bucketing needs a real scene");
  }
  Scene checked = scene;
  checked.latent = real_latent;
  checked.validate(model.spec());
  cfg.validate(model.spec().latent_height);
  const NoiseSchedule schedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
  TraceChannel channel;
  bucket_into(channel, real_latent, scene, cfg, schedule, model);
  return channel.take();
}

Mask editable_region(const BlobParams& source, const BlobParams& target, std::size_t height,
                     std::size_t width, int k) {
  return dilate(mask_union(rasterize_blob(source, height, width), rasterize_blob(target, height, width)), k);
}

EditResult edit_real(const Latent& real_latent, const Scene& scene, const DragRequest& drag,
                     const EditConfig& cfg, const Denoiser& model) {
  const DenoiserSpec& spec = model.spec();
  if (scene.provenance != Provenance::real) {
    throw ValidationError("scene.provenance: edit_real needs a real scene");
  }
  Scene checked = scene;
  checked.latent = real_latent;
  PreparedEdit prep = prepare(checked, drag, cfg, spec);
  const NoiseSchedule schedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
  const Mask region = editable_region(prep.source_params, prep.target_params, spec.latent_height,
                                      spec.latent_width, cfg.effective_dilation(spec.latent_height));
  const std::size_t channels = real_latent.channels();

  // Blended-latent background: outside the editable region the latent is
  // the real image noised to the current step, and exactly the image at 0.
  auto blend = [&](Latent& x, int t) {
    const Latent background =
        t == 0 ? real_latent
               : forward_noise(real_latent, t, bucket_noise(real_latent, cfg.seed, t), schedule);
    for (std::size_t cell = 0; cell < region.cells(); ++cell) {
      if (region[cell]) continue;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        x.data()[cell * channels + ch] = background.data()[cell * channels + ch];
      }
    }
  };

  const Latent start =
      forward_noise(real_latent, cfg.steps, bucket_noise(real_latent, cfg.seed, cfg.steps), schedule);

  TraceChannel channel;
  AttentionAggregator maps(scene.blobs.size(), spec.latent_height, spec.latent_width);
  TargetHooks target_hooks(channel, cfg, prep.dest_masks, prep.src_masks, maps);

  EditResult result;
  run_streams(
      cfg.parallel_streams, channel,
      [&] { bucket_into(channel, real_latent, checked, cfg, schedule, model); },
      [&] { result.edited = denoise(model, start, prep.target_blobs, schedule, target_hooks, blend); });
  result.source = real_latent;
  result.stats = std::move(target_hooks.stats);
  result.attention_maps = collect_maps(maps);
  result.editable_region = region;
  return result;
}

std::vector<BlobSpec> extract_blobs(std::span<const Mask> instance_masks,
                                    std::span<const std::string> descriptions,
                                    std::size_t text_width, std::uint64_t seed) {
  if (instance_masks.size() != descriptions.size()) {
    throw InvalidArgument("extract_blobs: " + std::to_string(instance_masks.size()) + " masks but " +
                          std::to_string(descriptions.size()) + " descriptions");
  }
  std::vector<BlobSpec> out;
  out.reserve(instance_masks.size());
  for (std::size_t i = 0; i < instance_masks.size(); ++i) {
    BlobSpec spec;
    try {
      spec.params = fit_ellipse(instance_masks[i]);
    } catch (const DegenerateMask& e) {
      throw DegenerateMask("mask " + std::to_string(i) + ": " + e.what());
    }
    spec.description = descriptions[i];
    spec.embedding = embed_description(descriptions[i], text_width, seed);
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace blobdrag
