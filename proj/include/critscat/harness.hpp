#pragma once

// Config-driven experiment runner behind the `critscat` binary.
//
// Config (JSON):
//   { "operation": "flow" | "manifold" | "scatter" | "amplitude" | "oracle1d" |
//                  "oracle2d" | "husimi" | "verify" | "validate-model",
//     "model": { ...ModelSpec... }  or  "model_file": "path.json",
//     "E": number                   energy, in units of V
//     or "E1": number with "h"      E = E0 + h E1
//     "output": "dir", "seed": int, "tol_scale": number,
//     "tolerances": { "abs_tol", "rel_tol", "energy_drift_tol" },
//     "params": { ...operation specific, see README... } }
//
// Exit status: 0 success, 2 invalid config (nothing written), 3 numerical
// hard error, 4 partial results (the manifest lists the failures).

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace critscat {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitPartial = 4;

// Command-line defaults; entries present in the config file win.
struct RunOverrides {
  std::optional<std::string> operation;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol_scale;
  int jobs = 1;
  std::filesystem::path base_dir;  // resolves relative paths in the config
};

struct RunResult {
  int exit_code = kExitOk;
  std::vector<std::string> outputs;   // file names relative to the output dir
  std::vector<std::string> failures;
  std::string message;
  nlohmann::json manifest;
};

/// Validates and runs one experiment. Never throws for config or numerical
/// problems; those map to the exit codes above.
RunResult run_experiment(const nlohmann::json& config, const RunOverrides& ov = {});

/// Reads a config file (JSON) and runs it; relative paths resolve against the
/// config file's directory.
RunResult run_config_file(const std::filesystem::path& path, RunOverrides ov = {});

}  // namespace critscat
