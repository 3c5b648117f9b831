#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tofvae/volume.hpp"

namespace tofvae {

// Synthetic angiography-like test volume: bright curved tubes inside a
// noisy tissue ellipsoid on a dark background, with optional saccular
// bulges attached to a vessel.
struct PhantomSpec {
  std::array<int64_t, 3> dims{64, 64, 64}; // each must be >= 48
  int64_t n_vessels = 4;
  double vessel_radius_lo = 1.0;   // voxels
  double vessel_radius_hi = 2.5;
  double vessel_intensity_lo = 0.75;
  double vessel_intensity_hi = 1.0;
  double tissue_intensity = 0.25;
  double tissue_noise_amp = 0.05;  // amplitude of smoothed tissue texture
  double noise_sigma = 0.02;       // additive Gaussian noise everywhere
  bool with_aneurysm = false;
  double aneurysm_radius_lo = 2.5; // voxels
  double aneurysm_radius_hi = 5.0;
  uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  Volume volume;              // intensities in [0, 1]
  BinaryMask3 vessel_mask;    // exact rasterization of the swept tubes
  BinaryMask3 aneurysm_mask;  // exact rasterization of the bulge (may be empty)
  bool has_aneurysm = false;
};

// Deterministic for a fixed spec. Tissue texture, vessel geometry, noise,
// and the aneurysm each draw from independent seeded substreams, so
// toggling with_aneurysm changes nothing outside the bulge itself.
Phantom generate_phantom(const PhantomSpec& spec);

struct CohortMember {
  Phantom phantom;
  uint64_t seed = 0;
  bool label = false; // true when the member carries an aneurysm
};

// n members with seeds base_seed + index; the first round(n * fraction)
// members carry aneurysms. proto supplies every other knob.
std::vector<CohortMember> generate_cohort(int64_t n, double aneurysm_fraction,
                                          uint64_t base_seed,
                                          const PhantomSpec& proto = {});

} // namespace tofvae
