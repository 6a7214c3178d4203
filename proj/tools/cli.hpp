#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mmvs/eval.hpp"
#include "mmvs/fusion.hpp"
#include "mmvs/losses.hpp"
#include "mmvs/meta.hpp"
#include "mmvs/network.hpp"
#include "mmvs/scene.hpp"

namespace mmvs::cli {

enum ExitCode : int { kOk = 0, kOther = 1, kConfigError = 2, kIoError = 3, kNumericalError = 4 };

// Every tunable of the pipeline. Section seeds always equal `seed`.
struct RunConfig {
  std::string preset = "desk";
  uint64_t seed = 0;
  DatasetConfig dataset;
  NetworkConfig network;
  LossWeights loss;
  MetaConfig meta;
  TrainConfig fine_tune;
  int test_neighbors = 2;  // N at prediction time
  FusionConfig fusion;
  EvalConfig eval;

  void SyncSeeds();
};

// "paper" or "desk"; the desk preset is an overlay on the paper preset.
RunConfig PresetConfig(const std::string& name);

// Layers the keys of `j` over the preset named by `preset_override`, else
// j["preset"], else "desk". Unknown keys throw ConfigError.
RunConfig RunConfigFromJson(const nlohmann::json& j, const std::optional<std::string>& preset_override = {});
nlohmann::json ToJson(const RunConfig& c);
uint64_t ConfigHash(const RunConfig& c);

// Reads a config file; I/O failures throw io::IoError, bad JSON ConfigError.
nlohmann::json ReadConfigFile(const std::string& path);

// Content hash over a file, or over every file below a directory (sorted
// relative paths, manifest.json skipped).
uint64_t ContentHash(const std::string& path);

// Parses argv-style arguments (without the program name) and runs one
// subcommand. Progress lines go to `out`, diagnostics to `err`.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmvs::cli
