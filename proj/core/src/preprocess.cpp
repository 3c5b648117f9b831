#include "tofvae/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "tofvae/errors.hpp"
#include "tofvae/rng.hpp"

namespace tofvae {

std::pair<Volume, NormalizationRecord> normalize(const Volume& v) {
  v.check_valid("normalize");
  const float mx = v.max_value();
  if (!(mx > 0.0f)) {
    throw Error::data(
        "normalize: volume has no positive intensity (max <= 0)");
  }
  NormalizationRecord rec;
  rec.scale = 0.95f * mx;
  Volume out = Volume::create(v.dims, v.spacing);
  out.source_datatype = v.source_datatype;
  out.raw_header = v.raw_header;
  const float inv = 1.0f / rec.scale;
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    const float s = v.voxels[i] * inv;
    if (s < 0.0f || s > 1.0f) rec.clamped = true;
    out.voxels[i] = std::clamp(s, 0.0f, 1.0f);
  }
  return {std::move(out), rec};
}

Volume denormalize(const Volume& v, const NormalizationRecord& record) {
  v.check_valid("denormalize");
  if (!(record.scale > 0.0f) || !std::isfinite(record.scale)) {
    throw Error::data(fmt::format(
        "denormalize: invalid scale {} (expected a positive finite value)",
        record.scale));
  }
  Volume out = Volume::create(v.dims, v.spacing);
  out.source_datatype = v.source_datatype;
  out.raw_header = v.raw_header;
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    out.voxels[i] = v.voxels[i] * record.scale;
  }
  return out;
}

double Histogram256::upper_edge(int bin) const {
  const double w = (hi - lo) / 256.0;
  return lo + (static_cast<double>(bin) + 1.0) * w;
}

Histogram256 histogram256(const std::vector<float>& values) {
  if (values.empty()) {
    throw Error::data("histogram256: no values");
  }
  Histogram256 h;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (float x : values) {
    if (!std::isfinite(x)) {
      throw Error::data("histogram256: non-finite value");
    }
    lo = std::min(lo, static_cast<double>(x));
    hi = std::max(hi, static_cast<double>(x));
  }
  h.lo = lo;
  h.hi = hi;
  if (hi == lo) {
    h.counts[0] = static_cast<int64_t>(values.size());
    return h;
  }
  const double scale = 256.0 / (hi - lo);
  for (float x : values) {
    int b = static_cast<int>((static_cast<double>(x) - lo) * scale);
    b = std::clamp(b, 0, 255);
    ++h.counts[b];
  }
  return h;
}

double otsu_threshold(const Histogram256& hist) {
  int64_t total = 0;
  double sum_all = 0.0;
  for (int b = 0; b < 256; ++b) {
    if (hist.counts[b] < 0) {
      throw Error::data("otsu_threshold: negative histogram count");
    }
    total += hist.counts[b];
    sum_all += static_cast<double>(b) * static_cast<double>(hist.counts[b]);
  }
  if (total == 0) {
    throw Error::data("otsu_threshold: empty histogram");
  }

  // Sweep cuts between bin t and t+1; class means are in bin units, which
  // maximizes the same objective as intensity units (affine relation).
  int best = -1;
  double best_var = -1.0;
  int64_t n0 = 0;
  double sum0 = 0.0;
  for (int t = 0; t < 255; ++t) {
    n0 += hist.counts[t];
    sum0 += static_cast<double>(t) * static_cast<double>(hist.counts[t]);
    const int64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const double mu0 = sum0 / static_cast<double>(n0);
    const double mu1 = (sum_all - sum0) / static_cast<double>(n1);
    const double w0 = static_cast<double>(n0) / static_cast<double>(total);
    const double w1 = static_cast<double>(n1) / static_cast<double>(total);
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best = t;
    }
  }
  if (best < 0) {
    throw Error::data(
        "otsu_threshold: all values fall in a single histogram bin "
        "(needs at least two distinct intensity levels)");
  }
  return hist.upper_edge(best);
}

double otsu_threshold(const std::vector<float>& values) {
  return otsu_threshold(histogram256(values));
}

namespace {

// Flood fill over face-adjacent voxels; returns component sizes and a
// per-voxel label (-1 for background). Scan order makes labels, and
// therefore tie-breaks, deterministic.
std::vector<int64_t> label_components_6(const BinaryMask3& mask,
                                        std::vector<int32_t>& labels) {
  const int64_t nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  const int64_t n = nx * ny * nz;
  labels.assign(static_cast<size_t>(n), -1);
  std::vector<int64_t> sizes;
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < n; ++start) {
    if (!mask.voxels[static_cast<size_t>(start)] || labels[static_cast<size_t>(start)] >= 0) {
      continue;
    }
    const int32_t id = static_cast<int32_t>(sizes.size());
    int64_t size = 0;
    stack.clear();
    stack.push_back(start);
    labels[static_cast<size_t>(start)] = id;
    while (!stack.empty()) {
      const int64_t idx = stack.back();
      stack.pop_back();
      ++size;
      const int64_t x = idx % nx;
      const int64_t y = (idx / nx) % ny;
      const int64_t z = idx / (nx * ny);
      const int64_t nbr[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                                 {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[0] >= nx || q[1] < 0 || q[1] >= ny || q[2] < 0 ||
            q[2] >= nz) {
          continue;
        }
        const int64_t j = (q[2] * ny + q[1]) * nx + q[0];
        if (mask.voxels[static_cast<size_t>(j)] && labels[static_cast<size_t>(j)] < 0) {
          labels[static_cast<size_t>(j)] = id;
          stack.push_back(j);
        }
      }
    }
    sizes.push_back(size);
  }
  return sizes;
}

} // namespace

BinaryMask3 largest_component_6(const BinaryMask3& mask) {
  std::vector<int32_t> labels;
  const std::vector<int64_t> sizes = label_components_6(mask, labels);
  BinaryMask3 out = BinaryMask3::create(mask.dims);
  if (sizes.empty()) return out;
  int32_t best = 0;
  for (size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] > sizes[static_cast<size_t>(best)]) best = static_cast<int32_t>(i);
  }
  for (size_t i = 0; i < labels.size(); ++i) {
    out.voxels[i] = (labels[i] == best) ? 1 : 0;
  }
  return out;
}

void remove_small_components_6(BinaryMask3& mask, int64_t min_voxels) {
  std::vector<int32_t> labels;
  const std::vector<int64_t> sizes = label_components_6(mask, labels);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0 && sizes[static_cast<size_t>(labels[i])] < min_voxels) {
      mask.voxels[i] = 0;
    }
  }
}

BinaryMask3 brain_mask(const Volume& v) {
  v.check_valid("brain_mask");
  const double thr = otsu_threshold(v.voxels);
  BinaryMask3 fg = BinaryMask3::create(v.dims);
  bool any = false;
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    const bool in = static_cast<double>(v.voxels[i]) > thr;
    fg.voxels[i] = in ? 1 : 0;
    any = any || in;
  }
  if (!any) {
    throw Error::data("brain_mask: threshold left no foreground voxels");
  }
  return largest_component_6(fg);
}

namespace {

// 1D Gaussian pass along one axis with the kernel renormalized to the
// in-bounds taps, so boundaries are not darkened.
void gaussian_pass(const std::vector<float>& src, std::vector<float>& dst,
                   const std::array<int64_t, 3>& dims, int axis,
                   const std::vector<double>& kernel) {
  const int64_t r = static_cast<int64_t>(kernel.size() / 2);
  const int64_t nx = dims[0], ny = dims[1];
  const int64_t strides[3] = {1, nx, nx * ny};
  const int64_t len = dims[static_cast<size_t>(axis)];
  const int64_t stride = strides[axis];

  // Iterate lines along `axis`: all (u, v) over the two other axes.
  const int a1 = (axis == 0) ? 1 : 0;
  const int a2 = (axis == 2) ? 1 : 2;
  for (int64_t w2 = 0; w2 < dims[static_cast<size_t>(a2)]; ++w2) {
    for (int64_t w1 = 0; w1 < dims[static_cast<size_t>(a1)]; ++w1) {
      const int64_t base = w1 * strides[a1] + w2 * strides[a2];
      for (int64_t i = 0; i < len; ++i) {
        double acc = 0.0;
        double wsum = 0.0;
        const int64_t j0 = std::max<int64_t>(-r, -i);
        const int64_t j1 = std::min<int64_t>(r, len - 1 - i);
        for (int64_t j = j0; j <= j1; ++j) {
          const double k = kernel[static_cast<size_t>(j + r)];
          acc += k * static_cast<double>(
                         src[static_cast<size_t>(base + (i + j) * stride)]);
          wsum += k;
        }
        dst[static_cast<size_t>(base + i * stride)] =
            static_cast<float>(acc / wsum);
      }
    }
  }
}

} // namespace

Volume flatten_bias(const Volume& v, double kernel_sigma, double eps) {
  v.check_valid("flatten_bias");
  if (!(kernel_sigma > 0.0) || !std::isfinite(kernel_sigma)) {
    throw Error::usage(fmt::format(
        "flatten_bias: kernel_sigma must be positive and finite, got {}",
        kernel_sigma));
  }
  if (!(eps > 0.0)) {
    throw Error::usage("flatten_bias: eps must be positive");
  }

  const int64_t r = std::max<int64_t>(
      1, static_cast<int64_t>(std::ceil(3.0 * kernel_sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * r + 1));
  double ksum = 0.0;
  for (int64_t j = -r; j <= r; ++j) {
    const double k =
        std::exp(-0.5 * static_cast<double>(j * j) / (kernel_sigma * kernel_sigma));
    kernel[static_cast<size_t>(j + r)] = k;
    ksum += k;
  }
  for (double& k : kernel) k /= ksum;

  std::vector<float> smooth = v.voxels;
  std::vector<float> tmp(v.voxels.size());
  gaussian_pass(smooth, tmp, v.dims, 0, kernel);
  gaussian_pass(tmp, smooth, v.dims, 1, kernel);
  gaussian_pass(smooth, tmp, v.dims, 2, kernel);
  smooth.swap(tmp);

  double mean = 0.0;
  for (float s : smooth) mean += static_cast<double>(s);
  mean /= static_cast<double>(smooth.size());

  Volume out = Volume::create(v.dims, v.spacing);
  out.source_datatype = v.source_datatype;
  out.raw_header = v.raw_header;
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    const double g = std::max(static_cast<double>(smooth[i]), eps);
    out.voxels[i] = static_cast<float>(static_cast<double>(v.voxels[i]) / g * mean);
  }
  return out;
}

PatchBatch sample_patches(const Volume& v, const BinaryMask3& mask,
                          const PatchConfig& cfg, int slice_axis) {
  v.check_valid("sample_patches");
  check_same_dims(v.dims, mask.dims, "sample_patches");
  if (cfg.patch_size != 32) {
    throw Error::usage(fmt::format(
        "sample_patches: patch_size must be 32 (model input size), got {}",
        cfg.patch_size));
  }
  if (cfg.patches_per_volume < 1) {
    throw Error::usage("sample_patches: patches_per_volume must be >= 1");
  }
  if (slice_axis < 0 || slice_axis > 2) {
    throw Error::usage(
        fmt::format("sample_patches: slice_axis must be 0, 1, or 2, got {}",
                    slice_axis));
  }

  const auto [cols_axis, rows_axis] = slice_plane_axes(slice_axis);
  const int64_t n_slices = v.dims[static_cast<size_t>(slice_axis)];
  const int64_t n_rows = v.dims[static_cast<size_t>(rows_axis)];
  const int64_t n_cols = v.dims[static_cast<size_t>(cols_axis)];
  const int64_t half = cfg.patch_size / 2;

  // A patch at center (r, c) covers rows [r-half, r+half), so valid centers
  // keep the footprint fully inside the slice.
  std::vector<PatchCoord> valid;
  std::array<int64_t, 3> coord{};
  for (int64_t s = 0; s < n_slices; ++s) {
    coord[static_cast<size_t>(slice_axis)] = s;
    for (int64_t r = half; r + half <= n_rows; ++r) {
      coord[static_cast<size_t>(rows_axis)] = r;
      for (int64_t c = half; c + half <= n_cols; ++c) {
        coord[static_cast<size_t>(cols_axis)] = c;
        if (mask.at(coord[0], coord[1], coord[2])) {
          valid.push_back(PatchCoord{s, r, c});
        }
      }
    }
  }
  if (valid.empty()) {
    throw Error::data(
        "sample_patches: no valid patch centers (mask empty near the "
        "interior, or slices smaller than the patch)");
  }

  rng::Prng prng(cfg.seed);
  PatchBatch batch;
  batch.patches = Tensor<float>(
      Shape4{cfg.patches_per_volume, 1, cfg.patch_size, cfg.patch_size});
  batch.coords.reserve(static_cast<size_t>(cfg.patches_per_volume));

  for (int64_t p = 0; p < cfg.patches_per_volume; ++p) {
    const PatchCoord pc = valid[prng.uniform_int(valid.size())];
    batch.coords.push_back(pc);
    coord[static_cast<size_t>(slice_axis)] = pc.slice;
    float* dst = batch.patches.data() + p * cfg.patch_size * cfg.patch_size;
    for (int64_t dr = 0; dr < cfg.patch_size; ++dr) {
      coord[static_cast<size_t>(rows_axis)] = pc.row - half + dr;
      for (int64_t dc = 0; dc < cfg.patch_size; ++dc) {
        coord[static_cast<size_t>(cols_axis)] = pc.col - half + dc;
        dst[dr * cfg.patch_size + dc] = v.at(coord[0], coord[1], coord[2]);
      }
    }
  }
  return batch;
}

} // namespace tofvae
