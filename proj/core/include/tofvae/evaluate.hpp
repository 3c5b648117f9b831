#pragma once

#include <string>
#include <vector>

#include "tofvae/losses.hpp"
#include "tofvae/volume.hpp"

namespace tofvae {

// Mean squared error over all voxels, or over mask voxels when a mask is
// given (empty mask is an error).
double mse_volume(const Volume& a, const Volume& b,
                  const BinaryMask3* mask = nullptr);

struct PsnrValue {
  double db = 0;
  bool infinite = false; // mse == 0
};

// 10 * log10(peak^2 / mse)
PsnrValue psnr(double mse, double peak = 1.0);

// Mean of the local-similarity map pooled over every valid window of every
// slice, computed in double precision.
double mean_ssim_volume(const Volume& a, const Volume& b,
                        const SsimConfig& cfg = {}, int slice_axis = 2);

// Bright-structure segmentation: Otsu threshold over in-brain intensities,
// kept inside the brain, with 6-connected components under
// min_component_voxels removed as speckle.
BinaryMask3 segment_vessels(const Volume& normalized, const BinaryMask3& brain,
                            int64_t min_component_voxels = 10);

struct DsiValue {
  double value = 0;
  bool both_empty = false; // two empty masks agree perfectly; value is 1
};

// Dice overlap 2|A^B| / (|A| + |B|).
DsiValue dsi(const BinaryMask3& a, const BinaryMask3& b);

struct MetricsRow {
  std::string id;
  double mse = 0;
  double mean_ssim = 0;
  double psnr_db = 0;
  double dsi = 0;
  bool psnr_infinite = false;
  bool dsi_both_empty = false;
};

struct MetricsAggregate {
  int64_t count = 0;
  int64_t psnr_finite_count = 0; // infinite rows are excluded from psnr stats
  double mse_mean = 0, mse_stddev = 0;
  double mean_ssim_mean = 0, mean_ssim_stddev = 0;
  double psnr_mean = 0, psnr_stddev = 0;
  double dsi_mean = 0, dsi_stddev = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  // Sample standard deviation (n-1 denominator; 0 for a single row).
  MetricsAggregate aggregate() const;
  // Columns: id,mse,mean_ssim,psnr_db,dsi,flags. Infinite psnr prints "inf";
  // flags is a semicolon-joined list (possibly empty).
  std::string csv() const;
  std::string json() const;
};

// All four metrics for one original/reconstruction pair in raw intensity
// units. Both volumes are mapped to the original's normalization; MSE is
// restricted to the brain mask; the Dice score compares segment_vessels run
// identically on both volumes.
MetricsRow evaluate_pair(const std::string& id, const Volume& original,
                         const Volume& reconstruction);

} // namespace tofvae
