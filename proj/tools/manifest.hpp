#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blobdrag/eval.hpp"
#include "blobdrag/pipeline.hpp"

namespace blobdrag::cli {

/// Run manifest: free-form body plus timings and output files. `write`
/// records itself and fails if a listed output is missing.
struct Manifest {
  nlohmann::json body = nlohmann::json::object();
  std::map<std::string, double> timings_ms;
  std::vector<std::filesystem::path> outputs;

  void add_output(const std::filesystem::path& path);
  void time(const std::string& stage, const std::function<void()>& body);
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path);
};

/// Runs `body`, mapping exceptions to exit codes with a diagnostic on `err`.
int guarded(std::ostream& err, const std::function<int()>& body);

std::string format_fixed(double v, int decimals);

/// source/edited tensors and previews, per-blob attention maps, and the
/// editable region when present.
void write_edit_outputs(const std::filesystem::path& dir, const EditResult& result,
                        Manifest& manifest, const std::string& prefix = "");

struct EvalSummary {
  std::vector<EvalReport> reports;
  double mean_foreground = 0.0;
  double mean_traces = 0.0;
  std::optional<double> kid;
};

/// Per-case foreground and traces; KID over whole-image embeddings of all
/// sources vs all edits (needs at least two cases).
EvalSummary evaluate_cases(std::span<const EvalCase> cases, const Embedder& emb);
nlohmann::json summary_line(const EvalSummary& s);

}  // namespace blobdrag::cli
