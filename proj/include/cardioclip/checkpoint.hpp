// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory: manifest.json (tensor table, stage tag, config
// digest) plus payload.bin (little-endian float32 tensors, back to back).
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cardioclip/params.hpp"

namespace cardioclip {

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::string dtype = "f32";
  std::uint64_t offset = 0;  // bytes into payload.bin
  std::string group;         // "encoder" or "projection"
  bool decay = true;
};

struct CheckpointManifest {
  std::string stage;
  std::string config_digest;
  std::vector<TensorEntry> tensors;
  std::uint64_t payload_bytes = 0;
};

struct Checkpoint {
  CheckpointManifest manifest;
  ParamStore<float> params;
};

/// Throws NumericError if any value is non-finite, IoError on write failure.
void save_checkpoint(const ParamStore<float>& params, const std::string& stage, const std::string& config_digest,
                     const std::filesystem::path& dir);

/// Throws FormatError / SizeMismatchError on a malformed checkpoint.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Loads and compares the stored digest with `expected_digest`. On mismatch
/// warns, then proceeds only when `force` is set (StateError otherwise).
Checkpoint load_checkpoint_checked(const std::filesystem::path& dir, const std::string& expected_digest, bool force);

}  // namespace cardioclip
