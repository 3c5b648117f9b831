#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "tofvae/errors.hpp"
#include "tofvae/inference.hpp"
#include "tofvae/rng.hpp"

using namespace tofvae;

namespace {

Volume random_volume(std::array<int64_t, 3> dims, uint64_t seed, float lo,
                     float hi) {
  Volume v = Volume::create(dims);
  rng::Prng r(seed);
  for (auto& x : v.voxels) x = static_cast<float>(r.uniform(lo, hi));
  return v;
}

BinaryMask3 full_mask(std::array<int64_t, 3> dims) {
  BinaryMask3 m = BinaryMask3::create(dims);
  std::fill(m.voxels.begin(), m.voxels.end(), uint8_t{1});
  return m;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("reconstruction preserves awkward dimensions and stays in range") {
  const VaeArchitecture arch = VaeArchitecture::standard();
  const auto params = init_params<float>(arch, 31);
  const Volume v = random_volume({61, 73, 5}, 8, 0.0f, 1.0f);

  const Volume recon = reconstruct_volume(arch, params, v);
  CHECK(recon.dims == v.dims);
  CHECK(recon.spacing == v.spacing);
  for (float f : recon.voxels) {
    CHECK(f >= 0.0f);
    CHECK(f <= 1.0f);
  }

  // same input, same parameters: the pass is deterministic
  const Volume again = reconstruct_volume(arch, params, v);
  CHECK(recon.voxels == again.voxels);
}

TEST_CASE("small slices pad up to the 32-voxel floor") {
  const VaeArchitecture arch = VaeArchitecture::standard();
  const auto params = init_params<float>(arch, 31);
  const Volume tiny = random_volume({20, 24, 3}, 9, 0.0f, 1.0f);
  const Volume recon = reconstruct_volume(arch, params, tiny);
  CHECK(recon.dims == tiny.dims);
}

TEST_CASE("rescaled reconstructions live in the input's unit system") {
  const VaeArchitecture arch = VaeArchitecture::standard();
  const auto params = init_params<float>(arch, 33);
  Volume v = random_volume({40, 40, 4}, 10, 0.0f, 200.0f);
  v.voxels[0] = 200.0f;  // pin the max

  const ReconstructionPair pair = reconstruct_and_rescale(arch, params, v);
  CHECK(pair.record.scale == doctest::Approx(0.95f * 200.0f));
  CHECK(pair.reconstruction.dims == v.dims);
  for (float f : pair.original_normalized.voxels) {
    CHECK(f >= 0.0f);
    CHECK(f <= 1.0f);
  }
  for (float f : pair.reconstruction_normalized.voxels) {
    CHECK(f >= 0.0f);
    CHECK(f <= 1.0f);
  }
  for (size_t i = 0; i < pair.reconstruction.voxels.size(); ++i) {
    CHECK(pair.reconstruction.voxels[i] >= 0.0f);
    CHECK(pair.reconstruction.voxels[i] <= pair.record.scale * 1.0001f);
    CHECK(pair.reconstruction.voxels[i] ==
          doctest::Approx(pair.reconstruction_normalized.voxels[i] *
                          pair.record.scale)
              .epsilon(1e-5));
  }
}

TEST_CASE("identical volumes produce a neutral map and an empty mask") {
  const Volume v = random_volume({40, 44, 6}, 12, 0.1f, 0.9f);
  const BinaryMask3 brain = full_mask(v.dims);
  const AnomalyResult res = anomaly_map(v, v, brain, SsimConfig{}, 0.6);

  CHECK(res.threshold == 0.6);
  CHECK(res.map.dims == v.dims);
  CHECK(res.mask.empty_mask());
  for (int64_t z = 0; z < 6; ++z)
    for (int64_t y = 0; y < 44; ++y)
      for (int64_t x = 0; x < 40; ++x) {
        const float m = res.map.at(x, y, z);
        if (x < 5 || x >= 35 || y < 5 || y >= 39) {
          CHECK(m == 1.0f);  // window leaves the slice: neutral
        } else {
          CHECK(m == doctest::Approx(1.0f).epsilon(1e-6));
        }
      }
}

TEST_CASE("a damaged region is flagged and the flag respects the brain mask") {
  const Volume v = random_volume({48, 48, 3}, 14, 0.4f, 0.6f);
  Volume damaged = v;
  // strong local disagreement in one slice
  for (int64_t y = 20; y < 28; ++y)
    for (int64_t x = 20; x < 28; ++x) damaged.at(x, y, 1) = 1.0f;

  const BinaryMask3 brain = full_mask(v.dims);
  const AnomalyResult res = anomaly_map(v, damaged, brain, SsimConfig{}, 0.6);
  CHECK(!res.mask.empty_mask());
  CHECK(res.mask.at(23, 23, 1));
  // untouched slice stays clean
  for (int64_t y = 0; y < 48; ++y)
    for (int64_t x = 0; x < 48; ++x) CHECK(!res.mask.at(x, y, 0));

  // masking out the brain suppresses every flag
  BinaryMask3 nothing = BinaryMask3::create(v.dims);
  const AnomalyResult gated = anomaly_map(v, damaged, nothing, SsimConfig{}, 0.6);
  CHECK(gated.mask.empty_mask());
  CHECK(gated.map.voxels == res.map.voxels);  // map itself is mask-independent
}

TEST_CASE("lowering the threshold can only shrink the mask") {
  const Volume v = random_volume({48, 48, 3}, 15, 0.3f, 0.7f);
  Volume other = random_volume({48, 48, 3}, 16, 0.3f, 0.7f);
  const BinaryMask3 brain = full_mask(v.dims);

  const AnomalyResult strict = anomaly_map(v, other, brain, SsimConfig{}, 0.2);
  const AnomalyResult loose = anomaly_map(v, other, brain, SsimConfig{}, 0.8);
  CHECK(strict.mask.count() <= loose.mask.count());
  for (size_t i = 0; i < strict.mask.voxels.size(); ++i)
    if (strict.mask.voxels[i]) CHECK(loose.mask.voxels[i]);
}

TEST_CASE("mismatched volumes and undersized slices are rejected") {
  const VaeArchitecture arch = VaeArchitecture::standard();
  const auto params = init_params<float>(arch, 35);

  const Volume a = random_volume({40, 40, 4}, 17, 0.0f, 1.0f);
  const Volume b = random_volume({40, 40, 5}, 18, 0.0f, 1.0f);
  CHECK_THROWS_AS(
      anomaly_map(a, b, full_mask(a.dims), SsimConfig{}, 0.6), Error);

  // slice plane smaller than the similarity window
  const Volume sliver = random_volume({8, 40, 4}, 19, 0.0f, 1.0f);
  CHECK_THROWS_AS(
      anomaly_map(sliver, sliver, full_mask(sliver.dims), SsimConfig{}, 0.6),
      Error);

  CHECK_THROWS_AS(reconstruct_volume(arch, params, a, 5), Error);
  CHECK_THROWS_AS(anomaly_map(a, a, full_mask(a.dims), SsimConfig{},
                              std::numeric_limits<double>::infinity()),
                  Error);
}

}  // TEST_SUITE
