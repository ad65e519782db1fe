// SPDX-License-Identifier: Apache-2.0
//
// Command implementations shared by the CLI and the acceptance driver.
// Output layout under `out`:
//   config.json, vocab.txt
//   data/{volumes/*.ccv1, reports.jsonl, grades.jsonl, structured.jsonl}
//   checkpoints/{mae,clip,finetune}/{manifest.json,payload.bin}
//   traces/<stage>.jsonl, metrics/<command>.json, manifests/<command>.json
//   plots/*.csv, plots/*.svg
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardioclip/config.hpp"

namespace cardioclip {

inline const std::vector<std::string>& pipeline_commands() {
  static const std::vector<std::string> kCommands{"synth",          "structure-reports", "pretrain-mae",
                                                  "pretrain-clip",  "eval-zeroshot",     "eval-retrieval",
                                                  "eval-cac",       "finetune",          "gradcheck"};
  return kCommands;
}

struct RunContext {
  RunConfig config;
  std::filesystem::path out;
  bool force = false;   // accept checkpoints produced under another config digest
  bool quiet = false;   // suppress per-epoch progress on stderr
  std::string version;  // recorded in the run manifest
};

struct CommandResult {
  nlohmann::ordered_json metrics;  // deterministic given config + seed
  bool ok = true;                  // false when a check inside the command failed (gradcheck)
};

/// Validates the config (ConfigError listing every violation), runs one
/// command, writes metrics/<command>.json and manifests/<command>.json.
/// Throws std::invalid_argument for an unknown command.
CommandResult run_command(const std::string& command, const RunContext& ctx);

struct ToyGradcheck {
  double mae_max_rel_error = 0.0;
  double clip_max_rel_error = 0.0;
  std::string mae_worst;
  std::string clip_worst;
  std::size_t probes = 0;
};

/// Finite-difference check of both stage losses on toy double-precision
/// encoders (16^3 volume, 4^3 patches, width 8, one block).
ToyGradcheck toy_gradcheck(const GradcheckConfig& cfg, std::uint64_t seed);

/// Output root: CARDIOCLIP_OUT when set, else `fallback`.
std::filesystem::path resolve_output_root(const std::filesystem::path& fallback);

}  // namespace cardioclip
