// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cardioclip/errors.hpp"
#include "cardioclip/rng.hpp"
#include "cardioclip/volume.hpp"

using namespace cardioclip;
namespace fs = std::filesystem;

namespace {

Volume3D random_volume(Dims3 dims, std::uint64_t seed) {
  Rng rng(seed);
  Volume3D v = Volume3D::zeros(dims, {0.5f, 0.7f, 1.25f});
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform(-1000.0, 1000.0));
  return v;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cardioclip_test_volume";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("zero 64^3 volume loads with every voxel zero") {
  const auto path = temp_file("zeros.ccv1");
  save_volume(Volume3D::zeros({64, 64, 64}), path);
  const Volume3D v = load_volume(path);
  CHECK(v.voxel_count() == 262144);
  CHECK(v.voxels.size() == 262144);
  CHECK(std::all_of(v.voxels.begin(), v.voxels.end(), [](float x) { return x == 0.0f; }));
}

TEST_CASE("save then load is the identity") {
  const auto path = temp_file("roundtrip.ccv1");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Volume3D v = random_volume({3 + seed, 5, 2 + 2 * seed}, seed);
    save_volume(v, path);
    CHECK(load_volume(path) == v);
    std::ifstream in(path, std::ios::binary);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
    CHECK(bytes == encode_ccv1(v));
  }
}

TEST_CASE("encoding layout and size arithmetic") {
  const auto bytes = encode_ccv1(Volume3D::zeros({2, 2, 2}));
  // magic (4) + dims (12) + spacing (12) + 8 voxels (32)
  CHECK(bytes.size() == 4 + 12 + 12 + 32);
  CHECK(std::memcmp(bytes.data(), "CCV1", 4) == 0);
  std::uint32_t d[3];
  std::memcpy(d, bytes.data() + 4, 12);
  CHECK(d[0] == 2);
  CHECK(d[1] == 2);
  CHECK(d[2] == 2);
  CHECK(encode_ccv1(Volume3D::zeros({2, 2, 2})) == bytes);
}

TEST_CASE("truncated payload is a size mismatch") {
  auto bytes = encode_ccv1(Volume3D::zeros({4, 4, 4}));
  bytes.resize(bytes.size() - 4);  // 63 voxels
  CHECK_THROWS_AS(decode_ccv1(bytes), SizeMismatchError);
  bytes.resize(bytes.size() + 8);
  CHECK_THROWS_AS(decode_ccv1(bytes), SizeMismatchError);
}

TEST_CASE("malformed headers name the field") {
  auto bytes = encode_ccv1(Volume3D::zeros({2, 2, 2}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_ccv1(bad_magic), FormatError);

  auto zero_dim = bytes;
  std::memset(zero_dim.data() + 8, 0, 4);
  try {
    decode_ccv1(zero_dim);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }

  auto bad_spacing = bytes;
  const float neg = -1.0f;
  std::memcpy(bad_spacing.data() + 16, &neg, 4);
  try {
    decode_ccv1(bad_spacing);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("spacing[0]") != std::string::npos);
  }

  CHECK_THROWS_AS(decode_ccv1(std::span<const std::uint8_t>(bytes.data(), 10)), FormatError);
}

TEST_CASE("non-finite voxel is rejected before writing") {
  Volume3D v = Volume3D::zeros({2, 2, 2});
  v.voxels[3] = std::numeric_limits<float>::quiet_NaN();
  const auto path = temp_file("nan.ccv1");
  fs::remove(path);
  CHECK_THROWS_AS(save_volume(v, path), NumericError);
  CHECK_FALSE(fs::exists(path));
  v.voxels[3] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(encode_ccv1(v), NumericError);
}

TEST_CASE("missing file and unwritable destination are I/O errors") {
  CHECK_THROWS_AS(load_volume("/nonexistent/dir/x.ccv1"), IoError);
  CHECK_THROWS_AS(save_volume(Volume3D::zeros({1, 1, 1}), "/nonexistent/dir/x.ccv1"), IoError);
}

TEST_CASE("intensity window endpoints, midpoint and clamping") {
  Volume3D v = Volume3D::zeros({1, 1, 5});
  v.voxels = {-300.0f, 700.0f, 200.0f, -1000.0f, 3000.0f};
  const Volume3D n = normalize_intensity(v, -300.0f, 700.0f);
  CHECK(n.voxels[0] == 0.0f);
  CHECK(n.voxels[1] == 1.0f);
  CHECK(n.voxels[2] == doctest::Approx(0.5f));
  CHECK(n.voxels[3] == 0.0f);
  CHECK(n.voxels[4] == 1.0f);
  CHECK_THROWS_AS(normalize_intensity(v, 1.0f, 1.0f), std::invalid_argument);
  CHECK_THROWS_AS(normalize_intensity(v, 2.0f, 1.0f), std::invalid_argument);
}

TEST_CASE("normalized output is bounded and monotone") {
  Volume3D v = random_volume({4, 4, 4}, 7);
  std::sort(v.voxels.begin(), v.voxels.end());
  const Volume3D n = normalize_intensity(v, -300.0f, 700.0f);
  for (std::size_t i = 0; i < n.voxels.size(); ++i) {
    CHECK(n.voxels[i] >= 0.0f);
    CHECK(n.voxels[i] <= 1.0f);
    if (i > 0) CHECK(n.voxels[i] >= n.voxels[i - 1]);
  }
}

TEST_CASE("crop region") {
  const Volume3D v = random_volume({64, 64, 64}, 3);
  CHECK(crop_region(v, {{0, 0, 0}, {64, 64, 64}}) == v);
  const Volume3D c = crop_region(v, {{16, 16, 16}, {32, 32, 32}});
  CHECK(c.dims == Dims3{32, 32, 32});
  CHECK(c.at(0, 0, 0) == v.at(16, 16, 16));
  CHECK(c.at(31, 5, 9) == v.at(47, 21, 25));
  CHECK_THROWS_AS(crop_region(v, {{0, 0, 0}, {65, 64, 64}}), BoundsError);
  CHECK_THROWS_AS(crop_region(v, {{40, 0, 0}, {32, 1, 1}}), BoundsError);
}

TEST_CASE("patchify arithmetic") {
  const PatchGrid g = patchify(Volume3D::zeros({64, 64, 64}), {16, 16, 16});
  CHECK(g.count() == 64);
  CHECK(g.patch_volume() == 4096);
  CHECK(g.patches.rows() == 64);
  CHECK(g.patches.cols() == 4096);

  const Volume3D small = random_volume({16, 16, 16}, 1);
  const PatchGrid one = patchify(small, {16, 16, 16});
  CHECK(one.count() == 1);
  for (std::size_t i = 0; i < small.voxels.size(); ++i) CHECK(one.patches(0, i) == small.voxels[i]);

  CHECK_THROWS_AS(patchify(Volume3D::zeros({60, 60, 60}), {16, 16, 16}), ShapeError);
}

TEST_CASE("patch order is grid row-major, contents z then y then x") {
  Volume3D v = Volume3D::zeros({4, 4, 4});
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<float>(i);
  const PatchGrid g = patchify(v, {2, 2, 2});
  CHECK(g.grid_dims == Dims3{2, 2, 2});
  // patch 1 is grid (0,0,1): voxels z in 0..1, y in 0..1, x in 2..3
  CHECK(g.patches(1, 0) == v.at(0, 0, 2));
  CHECK(g.patches(1, 1) == v.at(0, 0, 3));
  CHECK(g.patches(1, 2) == v.at(0, 1, 2));
  CHECK(g.patches(1, 4) == v.at(1, 0, 2));
  // patch 6 is grid (1,1,0)
  CHECK(g.patches(6, 0) == v.at(2, 2, 0));
}

TEST_CASE("unpatchify inverts patchify on random volumes") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims3 p{1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(4)};
    const Dims3 dims{p[0] * (1 + rng.index(4)), p[1] * (1 + rng.index(4)), p[2] * (1 + rng.index(4))};
    const Volume3D v = random_volume(dims, 100 + trial);
    CHECK(unpatchify(patchify(v, p)) == v);
  }
}
