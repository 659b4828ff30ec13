#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blobdrag/denoiser.hpp"
#include "blobdrag/error.hpp"
#include "blobdrag/eval.hpp"
#include "blobdrag/io.hpp"
#include "blobdrag/pipeline.hpp"
#include "manifest.hpp"

namespace blobdrag::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const DegenerateMask& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  }
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

void Manifest::add_output(const fs::path& path) { outputs.push_back(path); }

void Manifest::time(const std::string& stage, const std::function<void()>& body) {
  const auto start = std::chrono::steady_clock::now();
  body();
  const auto end = std::chrono::steady_clock::now();
  timings_ms[stage] = std::chrono::duration<double, std::milli>(end - start).count();
}

json Manifest::to_json() const {
  json outs = json::array();
  for (const fs::path& p : outputs) outs.push_back(p.filename().string());
  json j = body;
  j["version"] = BLOBDRAG_VERSION;
  j["outputs"] = outs;
  j["timings_ms"] = timings_ms;
  return j;
}

void Manifest::write(const fs::path& path) {
  add_output(path);
  write_json(path, to_json());
  for (const fs::path& p : outputs) {
    if (!fs::exists(p)) throw IoError("manifest lists missing output " + p.string());
  }
}

int cmd_fit(const fs::path& mask_path, const fs::path& out_json, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Mask mask = read_mask_pgm(mask_path);
    const EllipseFit fit = fit_ellipse_detailed(mask);
    const double iou = mask_iou(rasterize_blob(fit.params, mask.height(), mask.width()), mask);
    write_json(out_json, json(fit.params));
    out << "iou=" << format_fixed(iou, 4) << '\n';
    return kOk;
  });
}

int cmd_edit(const fs::path& scene_path, const fs::path& drag_path, const fs::path& config_path,
             const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const json config_json = read_json(config_path);
    const EditConfig cfg = config_json.get<EditConfig>();
    DenoiserSpec spec;
    if (config_json.contains("denoiser")) spec = config_json.at("denoiser").get<DenoiserSpec>();
    try {
      spec.validate();
    } catch (const InvalidArgument& e) {
      throw ValidationError(std::string("config.denoiser: ") + e.what());
    }
    const Scene scene = read_scene(scene_path, spec.text_width, spec.seed);
    const DragRequest drag = drag_from_json(read_json(drag_path));
    const ToyDenoiser model(spec);

    fs::create_directories(out_dir);
    Manifest manifest;
    manifest.body["command"] = "edit";
    manifest.body["config"] = cfg;
    manifest.body["denoiser"] = spec;
    manifest.body["schedule"] = schedule_to_json(make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end));
    manifest.body["drag"] = drag_to_json(drag);
    manifest.body["provenance"] = scene.provenance == Provenance::real ? "real" : "generated";

    EditResult result;
    manifest.time("edit", [&] {
      result = scene.provenance == Provenance::real ? edit_real(scene.latent, scene, drag, cfg, model)
                                                    : edit_generated(scene, drag, cfg, model);
    });
    manifest.body["stats"] = {{"kv_shares", result.stats.kv_shares},
                              {"soft_anchors", result.stats.soft_anchors},
                              {"nn_copies", result.stats.nn_copies}};

    manifest.time("write", [&] { write_edit_outputs(out_dir, result, manifest); });
    manifest.write(out_dir / "manifest.json");
    out << "wrote " << manifest.outputs.size() << " files to " << out_dir.string() << '\n';
    return kOk;
  });
}

void write_edit_outputs(const fs::path& dir, const EditResult& result, Manifest& manifest,
                        const std::string& prefix) {
  auto emit_latent = [&](const std::string& name, const Latent& x) {
    write_latent(dir / (prefix + name + ".bft"), x);
    manifest.add_output(dir / (prefix + name + ".bft"));
    write_preview_ppm(dir / (prefix + name + ".ppm"), x);
    manifest.add_output(dir / (prefix + name + ".ppm"));
  };
  emit_latent("source", result.source);
  emit_latent("edited", result.edited);
  for (std::size_t i = 0; i < result.attention_maps.size(); ++i) {
    const std::string stem = prefix + "attention_blob" + std::to_string(i);
    write_latent(dir / (stem + ".bft"), result.attention_maps[i]);
    manifest.add_output(dir / (stem + ".bft"));
    write_heatmap_pgm(dir / (stem + ".pgm"), result.attention_maps[i]);
    manifest.add_output(dir / (stem + ".pgm"));
  }
  if (result.editable_region.cells() > 0) {
    write_mask_pgm(dir / (prefix + "editable_region.pgm"), result.editable_region);
    manifest.add_output(dir / (prefix + "editable_region.pgm"));
  }
}

std::vector<double> embed_whole_image(const Latent& image, const Embedder& emb) {
  return emb.embed(resize_bilinear(image, kCanonicalCrop, kCanonicalCrop));
}

EvalSummary evaluate_cases(std::span<const EvalCase> cases, const Embedder& emb) {
  EvalSummary s;
  std::vector<std::vector<double>> real_set;
  std::vector<std::vector<double>> fake_set;
  for (const EvalCase& c : cases) {
    EvalReport r;
    r.foreground = foreground_similarity(c, emb);
    r.traces = object_traces(c, emb);
    s.reports.push_back(r);
    s.mean_foreground += r.foreground;
    s.mean_traces += r.traces;
    real_set.push_back(embed_whole_image(c.source, emb));
    fake_set.push_back(embed_whole_image(c.edited, emb));
  }
  if (!cases.empty()) {
    s.mean_foreground /= static_cast<double>(cases.size());
    s.mean_traces /= static_cast<double>(cases.size());
  }
  if (cases.size() >= 2) s.kid = kid(real_set, fake_set);
  return s;
}

json summary_line(const EvalSummary& s) {
  return json{{"summary", true},
              {"count", s.reports.size()},
              {"foreground", s.mean_foreground},
              {"traces", s.mean_traces},
              {"kid", s.kid ? json(*s.kid) : json(nullptr)}};
}

int cmd_eval(const fs::path& cases_path, const fs::path& out_jsonl, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::ifstream in(cases_path);
    if (!in) throw IoError("cannot open " + cases_path.string());
    std::vector<EvalCase> cases;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = "cases line " + std::to_string(line_no);
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ValidationError(where + ": invalid JSON: " + e.what());
      }
      auto resolve = [&](const char* key) {
        if (!j.contains(key) || !j.at(key).is_string()) throw ValidationError(where + "." + key + ": missing path");
        fs::path p = j.at(key).get<std::string>();
        if (p.is_relative()) p = cases_path.parent_path() / p;
        if (!fs::exists(p)) throw IoError(where + ": missing file " + p.string());
        return p;
      };
      auto blob = [&](const char* key) {
        if (!j.contains(key)) throw ValidationError(where + "." + key + ": missing");
        return j.at(key).get<BlobParams>();
      };
      EvalCase c;
      c.source = read_latent(resolve("source"));
      c.edited = read_latent(resolve("edited"));
      c.source_blob = blob("b_s");
      c.target_blob = blob("b_d");
      if (!c.source.same_shape(c.edited)) throw ValidationError(where + ": source and edited shapes differ");
      cases.push_back(std::move(c));
    }
    if (cases.empty()) throw ValidationError("no cases");

    const ToyEmbedder embedder;
    const EvalSummary summary = evaluate_cases(cases, embedder);

    std::ofstream o(out_jsonl, std::ios::trunc);
    if (!o) throw IoError("cannot open " + out_jsonl.string() + " for writing");
    for (std::size_t i = 0; i < summary.reports.size(); ++i) {
      o << json{{"index", i},
                {"foreground", summary.reports[i].foreground},
                {"traces", summary.reports[i].traces},
                {"kid", nullptr}}
               .dump()
        << '\n';
    }
    o << summary_line(summary).dump() << '\n';
    if (!o) throw IoError("failed writing " + out_jsonl.string());
    out << "foreground=" << format_fixed(summary.mean_foreground, 4)
        << " traces=" << format_fixed(summary.mean_traces, 4)
        << " kid=" << (summary.kid ? format_fixed(*summary.kid, 6) : std::string("n/a")) << '\n';
    return kOk;
  });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training-free blob dragging with attention control"};
  app.require_subcommand(1);

  std::string fit_mask, fit_out;
  auto* fit = app.add_subcommand("fit", "Fit an IoU-maximising ellipse to a PGM mask");
  fit->add_option("--mask", fit_mask, "Binary PGM mask")->required();
  fit->add_option("--out", fit_out, "Output BlobParams JSON")->required();

  std::string scene, drag, config, out_dir;
  auto* edit = app.add_subcommand("edit", "Drag one blob of a scene");
  edit->add_option("--scene", scene, "Scene JSON")->required();
  edit->add_option("--drag", drag, "Drag request JSON")->required();
  edit->add_option("--config", config, "Edit config JSON")->required();
  edit->add_option("--out-dir", out_dir, "Output directory")->required();

  std::string cases, eval_out;
  auto* eval = app.add_subcommand("eval", "Foreground / traces / KID over a case list");
  eval->add_option("--cases", cases, "Cases JSON lines")->required();
  eval->add_option("--out", eval_out, "Report JSON lines")->required();

  DemoOptions demo_opts;
  std::string demo_dir;
  auto* demo = app.add_subcommand("demo", "End-to-end toy run: generate, drag, edit real, evaluate");
  demo->add_option("--seed", demo_opts.seed, "Root seed");
  demo->add_option("--steps", demo_opts.steps, "Denoising steps")->check(CLI::Range(2, 1000));
  demo->add_option("--out-dir", demo_dir, "Output directory")->required();

  std::vector<std::string> argv_storage{"blobdrag"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  }

  if (*fit) return cmd_fit(fit_mask, fit_out, out, err);
  if (*edit) return cmd_edit(scene, drag, config, out_dir, out, err);
  if (*eval) return cmd_eval(cases, eval_out, out, err);
  demo_opts.out_dir = demo_dir;
  return cmd_demo(demo_opts, out, err);
}

}  // namespace blobdrag::cli
