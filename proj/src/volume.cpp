// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cardioclip/errors.hpp"

namespace cardioclip {

namespace {

constexpr std::size_t kHeaderBytes = 4 + 3 * 4 + 3 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

float get_f32(std::span<const std::uint8_t> in, std::size_t off) {
  return std::bit_cast<float>(get_u32(in, off));
}

std::string dims_str(const Dims3& d) {
  std::ostringstream os;
  os << d[0] << "x" << d[1] << "x" << d[2];
  return os.str();
}

}  // namespace

Volume3D Volume3D::zeros(Dims3 dims, std::array<float, 3> spacing) {
  Volume3D v;
  v.dims = dims;
  v.spacing = spacing;
  v.voxels.assign(dims[0] * dims[1] * dims[2], 0.0f);
  return v;
}

void Volume3D::validate() const {
  for (std::size_t k = 0; k < 3; ++k) {
    if (dims[k] < 1) throw ShapeError("volume dims must all be >= 1, got " + dims_str(dims));
    if (!(spacing[k] > 0.0f) || !std::isfinite(spacing[k]))
      throw ShapeError("volume spacing must be positive and finite");
  }
  if (voxels.size() != voxel_count()) {
    throw ShapeError("voxel count " + std::to_string(voxels.size()) + " does not match dims " +
                     dims_str(dims));
  }
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    if (!std::isfinite(voxels[i]))
      throw NumericError("non-finite voxel at flat index " + std::to_string(i));
  }
}

std::vector<std::uint8_t> encode_ccv1(const Volume3D& v) {
  v.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 4 * v.voxels.size());
  for (char c : {'C', 'C', 'V', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  for (std::size_t k = 0; k < 3; ++k) put_u32(out, static_cast<std::uint32_t>(v.dims[k]));
  for (std::size_t k = 0; k < 3; ++k) put_f32(out, v.spacing[k]);
  for (float x : v.voxels) put_f32(out, x);
  return out;
}

Volume3D decode_ccv1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("CCV1: header truncated");
  if (!(bytes[0] == 'C' && bytes[1] == 'C' && bytes[2] == 'V' && bytes[3] == '1'))
    throw FormatError("CCV1: bad magic");
  static constexpr const char* kDimNames[3] = {"depth", "height", "width"};
  static constexpr const char* kSpacingNames[3] = {"spacing[0]", "spacing[1]", "spacing[2]"};
  Volume3D v;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::uint32_t d = get_u32(bytes, 4 + 4 * k);
    if (d == 0) throw FormatError(std::string("CCV1: field '") + kDimNames[k] + "' is zero");
    v.dims[k] = d;
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const float s = get_f32(bytes, 16 + 4 * k);
    if (!(s > 0.0f) || !std::isfinite(s))
      throw FormatError(std::string("CCV1: field '") + kSpacingNames[k] + "' is not positive");
    v.spacing[k] = s;
  }
  const std::size_t n = v.voxel_count();
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (payload != 4 * n) {
    throw SizeMismatchError("CCV1: payload holds " + std::to_string(payload) + " bytes, header " +
                            dims_str(v.dims) + " requires " + std::to_string(4 * n));
  }
  v.voxels.resize(n);
  for (std::size_t i = 0; i < n; ++i) v.voxels[i] = get_f32(bytes, kHeaderBytes + 4 * i);
  v.validate();
  return v;
}

Volume3D load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_ccv1(bytes);
}

void save_volume(const Volume3D& v, const std::filesystem::path& path) {
  const auto bytes = encode_ccv1(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write volume file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Volume3D normalize_intensity(const Volume3D& v, float lo, float hi) {
  if (!(lo < hi)) throw std::invalid_argument("normalize_intensity: need lo < hi");
  Volume3D out = v;
  const float scale = 1.0f / (hi - lo);
  for (float& x : out.voxels) {
    const float c = std::clamp(x, lo, hi);
    x = (c - lo) * scale;
    if (c == hi) x = 1.0f;
  }
  return out;
}

Volume3D crop_region(const Volume3D& v, const CropSpec& c) {
  for (std::size_t k = 0; k < 3; ++k) {
    if (c.extent[k] < 1 || c.origin[k] + c.extent[k] > v.dims[k]) {
      throw BoundsError("crop origin " + dims_str(c.origin) + " + extent " + dims_str(c.extent) +
                        " exceeds volume dims " + dims_str(v.dims));
    }
  }
  Volume3D out = Volume3D::zeros(c.extent, v.spacing);
  for (std::size_t z = 0; z < c.extent[0]; ++z)
    for (std::size_t y = 0; y < c.extent[1]; ++y) {
      const float* src = &v.voxels[v.index(c.origin[0] + z, c.origin[1] + y, c.origin[2])];
      std::copy(src, src + c.extent[2], &out.voxels[out.index(z, y, 0)]);
    }
  return out;
}

PatchGrid patchify(const Volume3D& v, Dims3 patch_size) {
  PatchGrid g;
  g.patch_size = patch_size;
  g.spacing = v.spacing;
  for (std::size_t k = 0; k < 3; ++k) {
    if (patch_size[k] == 0 || v.dims[k] % patch_size[k] != 0) {
      throw ShapeError("patchify: volume dims " + dims_str(v.dims) +
                       " must be divisible by patch size " + dims_str(patch_size));
    }
    g.grid_dims[k] = v.dims[k] / patch_size[k];
  }
  const auto [pd, ph, pw] = patch_size;
  g.patches = Matrix<float>(g.count(), g.patch_volume());
  std::size_t p = 0;
  for (std::size_t gz = 0; gz < g.grid_dims[0]; ++gz)
    for (std::size_t gy = 0; gy < g.grid_dims[1]; ++gy)
      for (std::size_t gx = 0; gx < g.grid_dims[2]; ++gx, ++p) {
        float* dst = g.patches.row(p).data();
        for (std::size_t z = 0; z < pd; ++z)
          for (std::size_t y = 0; y < ph; ++y) {
            const float* src = &v.voxels[v.index(gz * pd + z, gy * ph + y, gx * pw)];
            std::copy(src, src + pw, dst);
            dst += pw;
          }
      }
  return g;
}

Volume3D unpatchify(const PatchGrid& g) {
  if (g.patches.rows() != g.count() || g.patches.cols() != g.patch_volume()) {
    throw ShapeError("unpatchify: patch matrix is " + std::to_string(g.patches.rows()) + "x" +
                     std::to_string(g.patches.cols()) + ", grid expects " +
                     std::to_string(g.count()) + "x" + std::to_string(g.patch_volume()));
  }
  const auto [pd, ph, pw] = g.patch_size;
  Volume3D v = Volume3D::zeros({g.grid_dims[0] * pd, g.grid_dims[1] * ph, g.grid_dims[2] * pw},
                               g.spacing);
  std::size_t p = 0;
  for (std::size_t gz = 0; gz < g.grid_dims[0]; ++gz)
    for (std::size_t gy = 0; gy < g.grid_dims[1]; ++gy)
      for (std::size_t gx = 0; gx < g.grid_dims[2]; ++gx, ++p) {
        const float* src = g.patches.row(p).data();
        for (std::size_t z = 0; z < pd; ++z)
          for (std::size_t y = 0; y < ph; ++y) {
            std::copy(src, src + pw, &v.voxels[v.index(gz * pd + z, gy * ph + y, gx * pw)]);
            src += pw;
          }
      }
  return v;
}

}  // namespace cardioclip
