#include "tofvae/inference.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tofvae/errors.hpp"

namespace tofvae {

namespace {

int64_t padded_extent(int64_t n) {
  return std::max<int64_t>(32, (n + 7) / 8 * 8);
}

} // namespace

Volume reconstruct_volume(const VaeArchitecture& arch,
                          const VaeParams<float>& params, const Volume& normalized,
                          int slice_axis) {
  normalized.check_valid("reconstruct_volume");
  if (slice_axis < 0 || slice_axis > 2) {
    throw Error::usage(fmt::format(
        "reconstruct_volume: slice_axis must be 0, 1, or 2, got {}", slice_axis));
  }

  const auto [cols_axis, rows_axis] = slice_plane_axes(slice_axis);
  const int64_t n_slices = normalized.dims[static_cast<size_t>(slice_axis)];
  const int64_t h = normalized.dims[static_cast<size_t>(rows_axis)];
  const int64_t w = normalized.dims[static_cast<size_t>(cols_axis)];
  const int64_t ph = padded_extent(h);
  const int64_t pw = padded_extent(w);
  const int64_t top = (ph - h) / 2;
  const int64_t left = (pw - w) / 2;

  Volume out = Volume::create(normalized.dims, normalized.spacing);
  out.source_datatype = normalized.source_datatype;
  out.raw_header = normalized.raw_header;

  constexpr int64_t kSliceBatch = 8;
  for (int64_t first = 0; first < n_slices; first += kSliceBatch) {
    const int64_t count = std::min(kSliceBatch, n_slices - first);
    Tensor<float> batch(Shape4{count, 1, ph, pw});
    for (int64_t b = 0; b < count; ++b) {
      const Tensor<float> sl = extract_slice(normalized, slice_axis, first + b);
      for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
          batch.at(b, 0, top + r, left + c) = sl.at(0, 0, r, c);
        }
      }
    }
    const LatentStats<float> latent = encode(arch, params, batch);
    const Tensor<float> recon = decode(arch, params, latent.mu);
    for (int64_t b = 0; b < count; ++b) {
      Tensor<float> sl(Shape4{1, 1, h, w});
      for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
          sl.at(0, 0, r, c) = recon.at(b, 0, top + r, left + c);
        }
      }
      insert_slice(out, slice_axis, first + b, sl);
    }
  }
  return out;
}

ReconstructionPair reconstruct_and_rescale(const VaeArchitecture& arch,
                                           const VaeParams<float>& params,
                                           const Volume& original,
                                           int slice_axis) {
  ReconstructionPair pair;
  auto [norm, rec] = normalize(original);
  pair.record = rec;
  pair.reconstruction_normalized =
      reconstruct_volume(arch, params, norm, slice_axis);
  pair.reconstruction = denormalize(pair.reconstruction_normalized, rec);
  pair.original_normalized = std::move(norm);
  return pair;
}

AnomalyResult anomaly_map(const Volume& original_normalized,
                          const Volume& reconstruction_normalized,
                          const BinaryMask3& brain, const SsimConfig& cfg,
                          double threshold, int slice_axis) {
  original_normalized.check_valid("anomaly_map");
  check_same_dims(original_normalized.dims, reconstruction_normalized.dims,
                  "anomaly_map");
  check_same_dims(original_normalized.dims, brain.dims, "anomaly_map mask");
  if (!std::isfinite(threshold)) {
    throw Error::usage("anomaly_map: threshold must be finite");
  }
  if (slice_axis < 0 || slice_axis > 2) {
    throw Error::usage(fmt::format(
        "anomaly_map: slice_axis must be 0, 1, or 2, got {}", slice_axis));
  }

  const auto [cols_axis, rows_axis] = slice_plane_axes(slice_axis);
  const int64_t n_slices =
      original_normalized.dims[static_cast<size_t>(slice_axis)];
  const int64_t h = original_normalized.dims[static_cast<size_t>(rows_axis)];
  const int64_t w = original_normalized.dims[static_cast<size_t>(cols_axis)];
  const int64_t k = cfg.window_size;
  if (h < k || w < k) {
    throw Error::data(fmt::format(
        "anomaly_map: slice plane {}x{} is smaller than the {}x{} window", h, w,
        k, k));
  }
  const int64_t off = (k - 1) / 2;

  AnomalyResult result;
  result.threshold = threshold;
  result.map = Volume::create(original_normalized.dims,
                              original_normalized.spacing);
  std::fill(result.map.voxels.begin(), result.map.voxels.end(), 1.0f);
  result.mask = BinaryMask3::create(original_normalized.dims);

  // Window statistics in double: the score of an identical pair must sit at
  // 1 to well below any plausible threshold granularity.
  std::array<int64_t, 3> coord{};
  for (int64_t s = 0; s < n_slices; ++s) {
    const Tensor<double> xs =
        extract_slice(original_normalized, slice_axis, s).cast<double>();
    const Tensor<double> ys =
        extract_slice(reconstruction_normalized, slice_axis, s).cast<double>();
    const Tensor<double> map = ssim_map_2d(xs, ys, cfg);
    coord[static_cast<size_t>(slice_axis)] = s;
    for (int64_t r = 0; r < map.shape().h; ++r) {
      coord[static_cast<size_t>(rows_axis)] = r + off;
      for (int64_t c = 0; c < map.shape().w; ++c) {
        coord[static_cast<size_t>(cols_axis)] = c + off;
        const double v = std::clamp(map.at(0, 0, r, c), -1.0, 1.0);
        const size_t idx = static_cast<size_t>(
            result.map.index(coord[0], coord[1], coord[2]));
        result.map.voxels[idx] = static_cast<float>(v);
        if (v < threshold && brain.voxels[idx]) {
          result.mask.voxels[idx] = 1;
        }
      }
    }
  }
  return result;
}

} // namespace tofvae
