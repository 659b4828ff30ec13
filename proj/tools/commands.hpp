#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace blobdrag::cli {

/// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kIoFailure = 1;
inline constexpr int kValidationFailure = 2;

/// Parses `args` (without the program name) and dispatches to a subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_fit(const std::filesystem::path& mask, const std::filesystem::path& out_json,
            std::ostream& out, std::ostream& err);

int cmd_edit(const std::filesystem::path& scene, const std::filesystem::path& drag,
             const std::filesystem::path& config, const std::filesystem::path& out_dir,
             std::ostream& out, std::ostream& err);

int cmd_eval(const std::filesystem::path& cases, const std::filesystem::path& out_jsonl,
             std::ostream& out, std::ostream& err);

struct DemoOptions {
  std::uint64_t seed = 0;
  int steps = 50;
  std::filesystem::path out_dir;
};

int cmd_demo(const DemoOptions& options, std::ostream& out, std::ostream& err);

}  // namespace blobdrag::cli
