#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "blobdrag/denoiser.hpp"
#include "blobdrag/error.hpp"
#include "blobdrag/eval.hpp"
#include "blobdrag/io.hpp"
#include "blobdrag/pipeline.hpp"
#include "blobdrag/rng.hpp"
#include "commands.hpp"
#include "manifest.hpp"

namespace blobdrag::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Scene demo_scene(const DenoiserSpec& spec, std::uint64_t seed) {
  Scene scene;
  const std::vector<std::pair<BlobParams, std::string>> blobs{
      {{8.0, 16.0, 5.0, 3.5, 0.3}, "a red ball"},
      {{22.0, 26.0, 4.5, 3.0, -0.5}, "a wooden box"},
  };
  for (const auto& [params, text] : blobs) {
    scene.blobs.push_back({params, text, embed_description(text, spec.text_width, spec.seed)});
  }
  // Round through float so the written scene reproduces this run exactly.
  scene.latent = latent_from_bft(to_bft(gaussian_latent(
      spec.latent_height, spec.latent_width, spec.latent_channels, derive_seed(seed, "init"))));
  return scene;
}

bool background_kept(const Latent& real, const Latent& edited, const Mask& region) {
  for (std::size_t r = 0; r < real.height(); ++r) {
    for (std::size_t c = 0; c < real.width(); ++c) {
      if (region.at(r, c)) continue;
      for (std::size_t ch = 0; ch < real.channels(); ++ch) {
        if (real.at(r, c, ch) != edited.at(r, c, ch)) return false;
      }
    }
  }
  return true;
}

bool stats_consistent(const EditStats& s, int steps, int rho) {
  for (std::size_t l = 0; l < s.kv_shares.size(); ++l) {
    if (s.kv_shares[l] != steps || s.soft_anchors[l] != rho || s.nn_copies[l] != steps - rho) {
      return false;
    }
  }
  return !s.kv_shares.empty();
}

json stats_json(const EditStats& s) {
  return {{"kv_shares", s.kv_shares}, {"soft_anchors", s.soft_anchors}, {"nn_copies", s.nn_copies}};
}

}  // namespace

int cmd_demo(const DemoOptions& options, std::ostream& out, std::ostream& err) {
  const int code = guarded(err, [&] {
    const fs::path dir = options.out_dir;
    fs::create_directories(dir);

    const DenoiserSpec spec;
    const ToyDenoiser model(spec);
    EditConfig cfg;
    cfg.steps = options.steps;
    cfg.seed = options.seed;
    cfg.validate(spec.latent_height);

    Manifest manifest;
    json checks = json::object();
    manifest.body["command"] = "demo";
    manifest.body["seed"] = options.seed;
    manifest.body["config"] = cfg;
    manifest.body["denoiser"] = spec;
    manifest.body["schedule"] = schedule_to_json(make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end));

    const Scene scene = demo_scene(spec, options.seed);
    DragRequest drag;
    drag.source_blob_index = 0;
    drag.target_center = std::pair{24.0, 16.0};
    const BlobParams target = drag.resolve(scene, spec);

    write_latent(dir / "scene_latent.bft", scene.latent);
    manifest.add_output(dir / "scene_latent.bft");
    write_scene(dir / "scene.json", scene, "scene_latent.bft");
    manifest.add_output(dir / "scene.json");
    write_json(dir / "drag.json", drag_to_json(drag));
    manifest.add_output(dir / "drag.json");
    json config_file = cfg;
    config_file["denoiser"] = spec;
    write_json(dir / "config.json", config_file);
    manifest.add_output(dir / "config.json");

    EditResult generated;
    manifest.time("edit_generated", [&] { generated = edit_generated(scene, drag, cfg, model); });
    checks["generated_stats"] = stats_consistent(generated.stats, cfg.steps, cfg.effective_rho());
    checks["generated_moved"] = max_abs_diff(generated.source, generated.edited) > 0.0;
    manifest.body["generated_stats"] = stats_json(generated.stats);

    manifest.time("null_drag", [&] {
      DragRequest null_drag;
      null_drag.source_blob_index = 0;
      null_drag.target_params = scene.blobs[0].params;
      const EditResult same = edit_generated(scene, null_drag, cfg, model);
      const double diff = max_abs_diff(same.source, same.edited);
      manifest.body["null_drag_max_abs_diff"] = diff;
      checks["null_drag"] = diff <= 1e-5;
    });

    Scene real;
    manifest.time("extract_blobs", [&] {
      std::vector<Mask> masks;
      std::vector<std::string> texts;
      for (const BlobSpec& b : scene.blobs) {
        masks.push_back(rasterize_blob(b.params, spec.latent_height, spec.latent_width));
        texts.push_back(b.description);
      }
      real.blobs = extract_blobs(masks, texts, spec.text_width, spec.seed);
      real.latent = latent_from_bft(to_bft(generated.source));
      real.provenance = Provenance::real;
      double worst = 1.0;
      for (std::size_t i = 0; i < masks.size(); ++i) {
        worst = std::min(worst, mask_iou(rasterize_blob(real.blobs[i].params, spec.latent_height,
                                                        spec.latent_width),
                                         masks[i]));
      }
      manifest.body["extract_min_iou"] = worst;
      checks["extract_blobs"] = worst >= 0.9;
    });
    write_latent(dir / "real_latent.bft", real.latent);
    manifest.add_output(dir / "real_latent.bft");
    write_scene(dir / "real_scene.json", real, "real_latent.bft");
    manifest.add_output(dir / "real_scene.json");

    EditResult edited_real;
    manifest.time("edit_real", [&] { edited_real = edit_real(real.latent, real, drag, cfg, model); });
    checks["real_background_exact"] =
        background_kept(real.latent, edited_real.edited, edited_real.editable_region);
    checks["real_stats"] = stats_consistent(edited_real.stats, cfg.steps, cfg.effective_rho());
    manifest.body["real_stats"] = stats_json(edited_real.stats);

    manifest.time("write", [&] {
      write_edit_outputs(dir, generated, manifest, "gen_");
      write_edit_outputs(dir, edited_real, manifest, "real_");
    });

    manifest.time("eval", [&] {
      const BlobParams source_blob = scene.blobs[0].params;
      const BlobParams real_target = drag.resolve(real, spec);
      std::vector<EvalCase> cases{
          {generated.source, generated.edited, source_blob, target},
          {real.latent, edited_real.edited,
           real.blobs[0].params, real_target},
      };
      std::ofstream case_file(dir / "eval_cases.jsonl", std::ios::trunc);
      case_file << json{{"source", "gen_source.bft"}, {"edited", "gen_edited.bft"},
                        {"b_s", source_blob}, {"b_d", target}}
                       .dump()
                << '\n'
                << json{{"source", "real_latent.bft"}, {"edited", "real_edited.bft"},
                        {"b_s", real.blobs[0].params}, {"b_d", real_target}}
                       .dump()
                << '\n';
      if (!case_file) throw IoError("failed writing eval_cases.jsonl");
      case_file.close();
      manifest.add_output(dir / "eval_cases.jsonl");

      const ToyEmbedder embedder;
      const EvalSummary summary = evaluate_cases(cases, embedder);
      std::ofstream report(dir / "eval.jsonl", std::ios::trunc);
      for (std::size_t i = 0; i < summary.reports.size(); ++i) {
        report << json{{"index", i},
                       {"foreground", summary.reports[i].foreground},
                       {"traces", summary.reports[i].traces},
                       {"kid", nullptr}}
                      .dump()
               << '\n';
      }
      report << summary_line(summary).dump() << '\n';
      if (!report) throw IoError("failed writing eval.jsonl");
      report.close();
      manifest.add_output(dir / "eval.jsonl");
      manifest.body["eval"] = summary_line(summary);
      checks["eval_finite"] = std::isfinite(summary.mean_foreground) &&
                              std::isfinite(summary.mean_traces) && summary.kid &&
                              std::isfinite(*summary.kid);

      const EvalDataset dataset = build_eval_cases(std::span<const Scene>(&scene, 1), options.seed);
      manifest.body["eval_dataset"] = {{"cases", dataset.cases.size()},
                                       {"warnings", dataset.warnings}};
    });

    manifest.body["checks"] = checks;
    bool ok = true;
    for (const auto& [name, passed] : checks.items()) {
      out << (passed.get<bool>() ? "ok   " : "FAIL ") << name << '\n';
      ok = ok && passed.get<bool>();
    }
    manifest.write(dir / "manifest.json");
    out << "wrote " << manifest.outputs.size() << " files to " << dir.string() << '\n';
    if (!ok) {
      err << "error: demo invariant checks failed\n";
      return kIoFailure;
    }
    return kOk;
  });
  // Any stage failure is a demo failure.
  return code == kOk ? kOk : kIoFailure;
}

}  // namespace blobdrag::cli
