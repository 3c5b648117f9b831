#pragma once

#include "tofvae/losses.hpp"
#include "tofvae/preprocess.hpp"
#include "tofvae/vae.hpp"
#include "tofvae/volume.hpp"

namespace tofvae {

// Deterministic slice-by-slice reconstruction (latents taken at the
// posterior mean). Slices are zero-padded symmetrically up to the next
// size the encoder accepts (multiple of 8, at least 32) and cropped back,
// so the output matches the input dimensions exactly. Expects intensities
// already normalized to [0, 1].
Volume reconstruct_volume(const VaeArchitecture& arch,
                          const VaeParams<float>& params, const Volume& normalized,
                          int slice_axis = 2);

struct ReconstructionPair {
  Volume reconstruction;            // back in the input's intensity units
  Volume original_normalized;       // the model-facing copy of the input
  Volume reconstruction_normalized; // decoder output in [0, 1]
  NormalizationRecord record;
};

// normalize -> reconstruct -> rescale, keeping both unit systems.
ReconstructionPair reconstruct_and_rescale(const VaeArchitecture& arch,
                                           const VaeParams<float>& params,
                                           const Volume& original,
                                           int slice_axis = 2);

struct AnomalyResult {
  Volume map;       // per-voxel local similarity; border voxels hold 1.0
  BinaryMask3 mask; // (map < threshold) AND brain
  double threshold = 0.6;
};

// Slice-wise local-similarity map between a volume and its reconstruction
// (both normalized), evaluated in double precision. Each window's score is
// placed at its center voxel; voxels whose window leaves the slice keep the
// neutral value 1.0 and can never be flagged.
AnomalyResult anomaly_map(const Volume& original_normalized,
                          const Volume& reconstruction_normalized,
                          const BinaryMask3& brain, const SsimConfig& cfg,
                          double threshold = 0.6, int slice_axis = 2);

} // namespace tofvae
