// SPDX-License-Identifier: Apache-2.0
// cardioclip run <command> [--config PATH|default] [--set key=value]... [--out DIR] [--force] [--quiet]

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "cardioclip/config.hpp"
#include "cardioclip/errors.hpp"
#include "cardioclip/pipeline.hpp"

#ifndef CARDIOCLIP_VERSION
#define CARDIOCLIP_VERSION "0.1.0-unknown"
#endif

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

std::string join_commands() {
  std::string s;
  for (const auto& c : cardioclip::pipeline_commands()) s += (s.empty() ? "" : ", ") + c;
  return s;
}

nlohmann::json read_document(const std::string& path) {
  if (path.empty() || path == "default") return nlohmann::json::parse(cardioclip::to_json(cardioclip::RunConfig{}).dump());
  std::ifstream in(path);
  if (!in) throw cardioclip::IoError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw cardioclip::FormatError("config " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardioclip: 3D CT volume/report contrastive pretraining pipeline"};
  app.set_version_flag("--version", std::string(CARDIOCLIP_VERSION));
  app.require_subcommand(1);

  std::string command, config_path = "default", out_dir;
  std::vector<std::string> overrides;
  bool force = false, quiet = false;

  auto* run = app.add_subcommand("run", "Run one pipeline command");
  run->add_option("command", command, "One of: " + join_commands())->required();
  run->add_option("--config", config_path, "Config JSON path, or 'default'");
  run->add_option("--set", overrides, "Override a config key, e.g. --set clip.temperature=0.1");
  run->add_option("--out", out_dir, "Output directory (default: $CARDIOCLIP_OUT or ./cardioclip-out)");
  run->add_flag("--force", force, "Load checkpoints whose config digest differs from the current config");
  run->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  const auto& cmds = cardioclip::pipeline_commands();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end()) {
    std::cerr << "error: unknown command '" << command << "'\nvalid commands: " << join_commands() << "\n";
    return kExitUsage;
  }

  cardioclip::RunContext ctx;
  try {
    nlohmann::json doc = read_document(config_path);
    for (const auto& o : overrides) cardioclip::apply_override(doc, o);
    ctx.config = cardioclip::config_from_json(doc);
  } catch (const cardioclip::FormatError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  ctx.out = out_dir.empty() ? cardioclip::resolve_output_root("cardioclip-out") : std::filesystem::path(out_dir);
  ctx.force = force;
  ctx.quiet = quiet;
  ctx.version = CARDIOCLIP_VERSION;

  try {
    const auto result = cardioclip::run_command(command, ctx);
    std::cout << result.metrics.dump(2) << std::endl;
    return result.ok ? 0 : kExitError;
  } catch (const cardioclip::ConfigError& e) {
    std::cerr << "invalid config (" << e.violations().size() << " violation"
              << (e.violations().size() == 1 ? "" : "s") << "):\n";
    for (const auto& v : e.violations()) std::cerr << "  - " << v << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error [" << command << "]: " << e.what() << "\n";
    return kExitError;
  }
}
