#include "tofvae/volume.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace tofvae {

Volume Volume::create(std::array<int64_t, 3> dims, std::array<float, 3> spacing) {
  Volume v;
  v.dims = dims;
  v.spacing = spacing;
  v.voxels.assign(static_cast<size_t>(v.numel()), 0.0f);
  v.check_valid("volume");
  return v;
}

float Volume::max_value() const {
  float m = voxels.empty() ? 0.0f : voxels[0];
  for (float v : voxels) m = std::max(m, v);
  return m;
}

void Volume::check_valid(const char* what) const {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw Error::data(fmt::format("{}: dims {}x{}x{} must all be >= 1", what,
                                  dims[0], dims[1], dims[2]));
  if (static_cast<int64_t>(voxels.size()) != numel())
    throw Error::data(fmt::format("{}: {} voxels stored, dims {}x{}x{} need {}",
                                  what, voxels.size(), dims[0], dims[1], dims[2],
                                  numel()));
  for (float s : spacing)
    if (!(s > 0))
      throw Error::data(fmt::format("{}: spacing {} must be positive", what, s));
}

BinaryMask3 BinaryMask3::create(std::array<int64_t, 3> dims) {
  BinaryMask3 m;
  m.dims = dims;
  m.voxels.assign(static_cast<size_t>(m.numel()), 0);
  return m;
}

int64_t BinaryMask3::count() const {
  int64_t n = 0;
  for (uint8_t v : voxels) n += v != 0;
  return n;
}

void check_same_dims(const std::array<int64_t, 3>& a,
                     const std::array<int64_t, 3>& b, const char* op) {
  if (a != b)
    throw Error::data(fmt::format("{}: dims {}x{}x{} and {}x{}x{} differ", op,
                                  a[0], a[1], a[2], b[0], b[1], b[2]));
}

std::pair<int, int> slice_plane_axes(int axis) {
  switch (axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    case 2: return {0, 1};
    default:
      throw Error::data(fmt::format("slice axis {} not in {{0,1,2}}", axis));
  }
}

Tensor<float> extract_slice(const Volume& v, int axis, int64_t index) {
  const auto [ca, ra] = slice_plane_axes(axis);
  if (index < 0 || index >= v.dims[axis])
    throw Error::data(fmt::format("slice index {} out of range [0,{}) on axis {}",
                                  index, v.dims[axis], axis));
  const int64_t w = v.dims[ca], h = v.dims[ra];
  Tensor<float> t({1, 1, h, w});
  int64_t coord[3];
  coord[axis] = index;
  for (int64_t r = 0; r < h; ++r) {
    coord[ra] = r;
    for (int64_t c = 0; c < w; ++c) {
      coord[ca] = c;
      t.at(0, 0, r, c) = v.at(coord[0], coord[1], coord[2]);
    }
  }
  return t;
}

void insert_slice(Volume& v, int axis, int64_t index, const Tensor<float>& slice) {
  const auto [ca, ra] = slice_plane_axes(axis);
  if (index < 0 || index >= v.dims[axis])
    throw Error::data(fmt::format("slice index {} out of range [0,{}) on axis {}",
                                  index, v.dims[axis], axis));
  const int64_t w = v.dims[ca], h = v.dims[ra];
  const Shape4 s = slice.shape();
  if (s.n != 1 || s.c != 1 || s.h != h || s.w != w)
    throw Error::data(fmt::format("insert_slice: slice shape {} does not match {}x{}",
                                  s.str(), h, w));
  int64_t coord[3];
  coord[axis] = index;
  for (int64_t r = 0; r < h; ++r) {
    coord[ra] = r;
    for (int64_t c = 0; c < w; ++c) {
      coord[ca] = c;
      v.at(coord[0], coord[1], coord[2]) = slice.at(0, 0, r, c);
    }
  }
}

}  // namespace tofvae
