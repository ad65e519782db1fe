// SPDX-License-Identifier: Apache-2.0
//
// One JSON document holding every tunable of a run.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardioclip/clip.hpp"
#include "cardioclip/encoders.hpp"
#include "cardioclip/eval.hpp"
#include "cardioclip/mae.hpp"
#include "cardioclip/synth.hpp"

namespace cardioclip {

struct DataConfig {
  std::size_t n_train = 512;  // first n_train cases train, the rest are held out
  float hu_lo = -300.0f;
  float hu_hi = 700.0f;
};

struct EvalConfig {
  std::size_t recall_k = 10;
  std::size_t precision_k = 5;
};

struct GradcheckConfig {
  std::size_t probes = 64;
  double eps = 1e-5;
  double tolerance = 1e-4;
  double perturb = 0.3;  // parameter jitter before probing
};

struct RunConfig {
  std::uint64_t seed = 42;
  SynthSpec synth;
  DataConfig data;
  VisualEncoderConfig visual;
  DecoderConfig decoder;
  TextEncoderConfig text;  // vocab_size is derived from the corpus
  MaeTrainConfig mae;
  ContrastiveConfig clip;
  FinetuneConfig finetune;
  EvalConfig eval;
  GradcheckConfig gradcheck;

  /// Every violated invariant, one message each; empty when valid.
  std::vector<std::string> validate() const;

  /// Stage seeds derived from the root seed via named substreams.
  RunConfig with_derived_seeds() const;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

nlohmann::ordered_json to_json(const RunConfig& c);

/// Keys missing from `j` keep their defaults; unknown keys throw FormatError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path_or_default);

/// `key` is a dotted path such as "clip.temperature"; `value` is parsed as
/// JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Compact dump with sorted keys.
std::string canonical_json(const RunConfig& c);
/// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_digest(const RunConfig& c);

}  // namespace cardioclip
