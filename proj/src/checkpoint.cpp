// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cardioclip/errors.hpp"
#include "cardioclip/log.hpp"

namespace cardioclip {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

std::string group_name(ParamGroup g) { return g == ParamGroup::Projection ? "projection" : "encoder"; }

ParamGroup parse_group(const std::string& s) {
  if (s == "encoder") return ParamGroup::Encoder;
  if (s == "projection") return ParamGroup::Projection;
  throw FormatError("checkpoint: unknown parameter group '" + s + "'");
}

}  // namespace

void save_checkpoint(const ParamStore<float>& params, const std::string& stage, const std::string& config_digest,
                     const std::filesystem::path& dir) {
  if (!params.all_finite()) throw NumericError("save_checkpoint: parameters contain non-finite values");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::ofstream payload(dir / "payload.bin", std::ios::binary | std::ios::trunc);
  if (!payload) throw IoError("cannot write " + (dir / "payload.bin").string());
  std::uint64_t offset = 0;
  for (const auto& p : params.items()) {
    tensors.push_back({{"name", p.name},
                       {"shape", p.shape},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"group", group_name(p.group)},
                       {"decay", p.decay}});
    const auto bytes = p.value.size() * sizeof(float);
    payload.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  payload.close();
  if (!payload) throw IoError("write failed for " + (dir / "payload.bin").string());

  nlohmann::ordered_json manifest{{"format", "cardioclip-checkpoint-1"},
                                  {"stage", stage},
                                  {"config_digest", config_digest},
                                  {"payload_bytes", offset},
                                  {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  Checkpoint ck;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    ck.manifest.stage = j.at("stage").get<std::string>();
    ck.manifest.config_digest = j.at("config_digest").get<std::string>();
    ck.manifest.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    for (const auto& t : j.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<std::vector<std::size_t>>();
      e.dtype = t.at("dtype").get<std::string>();
      e.offset = t.at("offset").get<std::uint64_t>();
      e.group = t.value("group", "encoder");
      e.decay = t.value("decay", true);
      if (e.dtype != "f32") throw FormatError("checkpoint: tensor " + e.name + " has unsupported dtype " + e.dtype);
      ck.manifest.tensors.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }

  std::uint64_t expected = 0;
  for (const auto& e : ck.manifest.tensors) {
    if (e.offset != expected) throw FormatError("checkpoint: tensor " + e.name + " is not contiguous with its predecessor");
    std::uint64_t n = 1;
    for (auto s : e.shape) n *= s;
    expected += n * sizeof(float);
  }
  if (expected != ck.manifest.payload_bytes)
    throw SizeMismatchError("checkpoint: manifest payload_bytes disagrees with tensor table");

  const auto payload_path = dir / "payload.bin";
  std::error_code ec;
  const auto actual = std::filesystem::file_size(payload_path, ec);
  if (ec) throw IoError("cannot stat " + payload_path.string() + ": " + ec.message());
  if (actual != expected) {
    throw SizeMismatchError("checkpoint payload " + payload_path.string() + " has " + std::to_string(actual) +
                            " bytes, manifest expects " + std::to_string(expected));
  }
  std::ifstream payload(payload_path, std::ios::binary);
  if (!payload) throw IoError("cannot open " + payload_path.string());
  for (const auto& e : ck.manifest.tensors) {
    std::size_t n = 1;
    for (auto s : e.shape) n *= s;
    Parameter<float> p{e.name, e.shape, parse_group(e.group), e.decay, std::vector<float>(n), {}};
    payload.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!payload) throw IoError("short read in " + payload_path.string());
    ck.params.insert(std::move(p));
  }
  return ck;
}

Checkpoint load_checkpoint_checked(const std::filesystem::path& dir, const std::string& expected_digest, bool force) {
  Checkpoint ck = load_checkpoint(dir);
  if (ck.manifest.config_digest != expected_digest) {
    warn("checkpoint " + dir.string() + " was produced under config digest " + ck.manifest.config_digest +
         ", current config is " + expected_digest);
    if (!force) throw StateError("checkpoint config digest mismatch (pass --force to proceed)");
  }
  return ck;
}

}  // namespace cardioclip
