#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tofvae/tensor.hpp"
#include "tofvae/volume.hpp"

namespace tofvae {

// Tag identifying the intensity-normalization convention. Stored in
// checkpoints so inference can refuse volumes prepared differently.
inline constexpr const char* kNormalizationTag = "0.95max-clamp01";

struct NormalizationRecord {
  float scale = 1.0f;   // divisor applied to raw intensities (0.95 * max)
  bool clamped = false; // true if any voxel exceeded the scale and was clipped
  std::string convention = kNormalizationTag;
};

// v' = clamp(v / (0.95 * max(v)), 0, 1). Errors if the volume has no
// positive intensity (max <= 0 leaves nothing to scale).
std::pair<Volume, NormalizationRecord> normalize(const Volume& v);

// v = v' * record.scale. Exact inverse for voxels that were not clamped.
Volume denormalize(const Volume& v, const NormalizationRecord& record);

// 256-bin histogram spanning [lo, hi]. Bin b covers
// [lo + b*w, lo + (b+1)*w) with w = (hi - lo) / 256; hi lands in bin 255.
struct Histogram256 {
  std::array<int64_t, 256> counts{};
  double lo = 0.0;
  double hi = 0.0;

  // Threshold value separating bins [0, bin] from (bin, 255].
  double upper_edge(int bin) const;
};

Histogram256 histogram256(const std::vector<float>& values);

// Threshold maximizing the between-class variance w0*w1*(mu0 - mu1)^2 over
// the 255 possible cuts; ties resolved toward the lowest threshold.
// Errors when every count sits in a single bin (nothing to separate).
double otsu_threshold(const Histogram256& hist);
double otsu_threshold(const std::vector<float>& values);

// Connected-component utilities over the 6-neighborhood (face adjacency).
// largest_component_6 keeps the biggest foreground component (ties broken
// by scan order); remove_small_components_6 deletes components with fewer
// than min_voxels voxels.
BinaryMask3 largest_component_6(const BinaryMask3& mask);
void remove_small_components_6(BinaryMask3& mask, int64_t min_voxels);

// Foreground voxels above the Otsu threshold, reduced to the largest
// 6-connected component.
BinaryMask3 brain_mask(const Volume& v);

// Multiplicative low-frequency flattening:
//   v' = v / max(G_sigma(v), eps) * mean(G_sigma(v))
// with G_sigma a separable Gaussian whose window is renormalized at the
// boundary. eps floors the divisor so near-zero background cannot blow up.
Volume flatten_bias(const Volume& v, double kernel_sigma, double eps = 1e-3);

struct PatchConfig {
  int64_t patch_size = 32;       // fixed by the model architecture
  int64_t patches_per_volume = 1000;
  uint64_t seed = 0;
};

// Patch center in volume coordinates: slice index along the slicing axis,
// (row, col) within the slice plane (volume.hpp plane convention).
struct PatchCoord {
  int64_t slice = 0;
  int64_t row = 0;
  int64_t col = 0;
};

struct PatchBatch {
  Tensor<float> patches; // P x 1 x patch_size x patch_size
  std::vector<PatchCoord> coords;
};

// Draws patches uniformly (with replacement) over all (slice, center)
// pairs whose center voxel is inside the mask and whose patch footprint
// lies fully inside the slice. Seeded and reproducible. Errors when no
// valid center exists.
PatchBatch sample_patches(const Volume& v, const BinaryMask3& mask,
                          const PatchConfig& cfg, int slice_axis = 2);

} // namespace tofvae
