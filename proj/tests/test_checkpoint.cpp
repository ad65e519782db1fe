// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "cardioclip/checkpoint.hpp"
#include "cardioclip/errors.hpp"
#include "cardioclip/log.hpp"

using namespace cardioclip;
namespace fs = std::filesystem;

namespace {

ParamStore<float> sample_params() {
  Rng rng(3);
  ParamStore<float> p;
  p.add("visual.w.weight", {4, 3}, ParamGroup::Encoder, Init::TruncNormal, rng);
  p.add("visual.b.bias", {3}, ParamGroup::Encoder, Init::TruncNormal, rng, false);
  p.add("visual.proj.weight", {3, 2}, ParamGroup::Projection, Init::TruncNormal, rng);
  return p;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("cardioclip_ckpt_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("round trip is bit exact and keeps metadata") {
  const auto dir = fresh_dir("rt");
  const auto p = sample_params();
  save_checkpoint(p, "mae", "0123456789abcdef", dir);
  const auto ck = load_checkpoint(dir);
  CHECK(ck.manifest.stage == "mae");
  CHECK(ck.manifest.config_digest == "0123456789abcdef");
  CHECK(ck.manifest.payload_bytes == (12 + 3 + 6) * sizeof(float));
  REQUIRE(ck.params.size() == p.size());
  for (const auto& q : p.items()) {
    const auto& r = ck.params.at(q.name);
    CHECK(r.shape == q.shape);
    CHECK(r.value == q.value);
    CHECK(r.group == q.group);
    CHECK(r.decay == q.decay);
  }
  CHECK(fs::file_size(dir / "payload.bin") == ck.manifest.payload_bytes);
}

TEST_CASE("payload size disagreements") {
  const auto dir = fresh_dir("trunc");
  save_checkpoint(sample_params(), "mae", "d", dir);
  fs::resize_file(dir / "payload.bin", 8);
  CHECK_THROWS_AS(load_checkpoint(dir), SizeMismatchError);
  const auto dir2 = fresh_dir("ext");
  save_checkpoint(sample_params(), "mae", "d", dir2);
  {
    std::ofstream out(dir2 / "payload.bin", std::ios::binary | std::ios::app);
    out.put('\0');
  }
  CHECK_THROWS_AS(load_checkpoint(dir2), SizeMismatchError);
}

TEST_CASE("malformed manifest") {
  const auto dir = fresh_dir("bad");
  save_checkpoint(sample_params(), "mae", "d", dir);
  {
    std::ofstream out(dir / "manifest.json");
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
}

TEST_CASE("digest mismatch refuses unless forced") {
  const auto dir = fresh_dir("digest");
  save_checkpoint(sample_params(), "clip", "aaaa", dir);
  CHECK_NOTHROW(load_checkpoint_checked(dir, "aaaa", false));
  const std::size_t before = warning_count();
  CHECK_THROWS_AS(load_checkpoint_checked(dir, "bbbb", false), StateError);
  const auto ck = load_checkpoint_checked(dir, "bbbb", true);
  CHECK(ck.params.size() == 3);
  CHECK(warning_count() == before + 2);
}

TEST_CASE("non-finite values are not written") {
  const auto dir = fresh_dir("nan");
  auto p = sample_params();
  p.at("visual.b.bias").value[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(save_checkpoint(p, "mae", "d", dir), NumericError);
  CHECK_FALSE(fs::exists(dir / "payload.bin"));
}

TEST_CASE("io errors") {
  CHECK_THROWS_AS(load_checkpoint(fresh_dir("missing")), IoError);
  const auto file = fs::temp_directory_path() / "cardioclip_ckpt_plain_file";
  { std::ofstream(file) << "x"; }
  CHECK_THROWS_AS(save_checkpoint(sample_params(), "mae", "d", file / "sub"), IoError);
}
