#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tofvae/tensor.hpp"

namespace tofvae {

// 3D voxel grid, x fastest, then y, then z. Voxels are always f32 internally;
// source_datatype remembers the on-disk type. raw_header carries the original
// 348-byte NIfTI header (normalized to little-endian) for verbatim
// pass-through of uninterpreted fields.
struct Volume {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<float> voxels;
  int16_t source_datatype = 16;
  std::vector<uint8_t> raw_header;

  static Volume create(std::array<int64_t, 3> dims,
                       std::array<float, 3> spacing = {1.0f, 1.0f, 1.0f});

  int64_t numel() const { return dims[0] * dims[1] * dims[2]; }

  int64_t index(int64_t x, int64_t y, int64_t z) const {
    return (z * dims[1] + y) * dims[0] + x;
  }
  float at(int64_t x, int64_t y, int64_t z) const { return voxels[index(x, y, z)]; }
  float& at(int64_t x, int64_t y, int64_t z) { return voxels[index(x, y, z)]; }

  float max_value() const;
  void check_valid(const char* what) const;  // dims/spacing/data-length invariants
};

struct BinaryMask3 {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::vector<uint8_t> voxels;  // 0 or 1

  static BinaryMask3 create(std::array<int64_t, 3> dims);

  int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
  int64_t index(int64_t x, int64_t y, int64_t z) const {
    return (z * dims[1] + y) * dims[0] + x;
  }
  bool at(int64_t x, int64_t y, int64_t z) const {
    return voxels[index(x, y, z)] != 0;
  }
  void set(int64_t x, int64_t y, int64_t z, bool v) {
    voxels[index(x, y, z)] = v ? 1 : 0;
  }
  int64_t count() const;
  bool empty_mask() const { return count() == 0; }
};

void check_same_dims(const std::array<int64_t, 3>& a,
                     const std::array<int64_t, 3>& b, const char* op);

// The two axes other than `axis`, ascending: (cols_axis, rows_axis).
std::pair<int, int> slice_plane_axes(int axis);

// 1x1xHxW tensor with rows along the higher remaining axis and columns along
// the lower one; (r, c) maps to coord[cols_axis]=c, coord[rows_axis]=r.
Tensor<float> extract_slice(const Volume& v, int axis, int64_t index);
void insert_slice(Volume& v, int axis, int64_t index, const Tensor<float>& slice);

}  // namespace tofvae
