// SPDX-License-Identifier: Apache-2.0
//
// 3D scalar volumes, the CCV1 file format, and patch decomposition.
//
// CCV1 layout (all little-endian, no padding):
//   "CCV1" | u32 depth | u32 height | u32 width | f32 spacing[3] | f32 voxels[d*h*w]
// Voxels are stored z-major (z, then y, then x).
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cardioclip/matrix.hpp"

namespace cardioclip {

using Dims3 = std::array<std::size_t, 3>;

/// Depth, height, width ordering throughout.
struct Volume3D {
  Dims3 dims{1, 1, 1};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<float> voxels;

  static Volume3D zeros(Dims3 dims, std::array<float, 3> spacing = {1.0f, 1.0f, 1.0f});

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * dims[1] + y) * dims[2] + x;
  }
  float& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[index(z, y, x)]; }
  float at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[index(z, y, x)]; }

  /// Throws ShapeError / NumericError when an invariant is broken.
  void validate() const;

  bool operator==(const Volume3D&) const = default;
};

struct CropSpec {
  Dims3 origin{0, 0, 0};
  Dims3 extent{1, 1, 1};
};

/// Non-overlapping patches in row-major grid order, each flattened z→y→x.
struct PatchGrid {
  Dims3 patch_size{1, 1, 1};
  Dims3 grid_dims{1, 1, 1};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  Matrix<float> patches;  // count() x patch_volume()

  std::size_t count() const { return grid_dims[0] * grid_dims[1] * grid_dims[2]; }
  std::size_t patch_volume() const { return patch_size[0] * patch_size[1] * patch_size[2]; }
};

std::vector<std::uint8_t> encode_ccv1(const Volume3D& v);
Volume3D decode_ccv1(std::span<const std::uint8_t> bytes);

Volume3D load_volume(const std::filesystem::path& path);
void save_volume(const Volume3D& v, const std::filesystem::path& path);

/// Clamp to [lo, hi] and map affinely onto [0, 1].
Volume3D normalize_intensity(const Volume3D& v, float lo, float hi);

Volume3D crop_region(const Volume3D& v, const CropSpec& c);

PatchGrid patchify(const Volume3D& v, Dims3 patch_size);
Volume3D unpatchify(const PatchGrid& g);

}  // namespace cardioclip
