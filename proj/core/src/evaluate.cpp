#include "tofvae/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

#include "tofvae/errors.hpp"
#include "tofvae/preprocess.hpp"

namespace tofvae {

double mse_volume(const Volume& a, const Volume& b, const BinaryMask3* mask) {
  a.check_valid("mse");
  check_same_dims(a.dims, b.dims, "mse");
  if (mask) check_same_dims(a.dims, mask->dims, "mse mask");
  double sum = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < a.voxels.size(); ++i) {
    if (mask && !mask->voxels[i]) continue;
    const double d = static_cast<double>(a.voxels[i]) - static_cast<double>(b.voxels[i]);
    sum += d * d;
    ++n;
  }
  if (n == 0) {
    throw Error::data("mse: mask selects no voxels");
  }
  return sum / static_cast<double>(n);
}

PsnrValue psnr(double mse, double peak) {
  if (!(peak > 0.0) || !std::isfinite(peak)) {
    throw Error::usage(fmt::format("psnr: peak must be positive, got {}", peak));
  }
  if (mse < 0.0 || !std::isfinite(mse)) {
    throw Error::data(fmt::format("psnr: mse must be finite and >= 0, got {}", mse));
  }
  if (mse == 0.0) {
    return PsnrValue{std::numeric_limits<double>::infinity(), true};
  }
  return PsnrValue{10.0 * std::log10(peak * peak / mse), false};
}

double mean_ssim_volume(const Volume& a, const Volume& b, const SsimConfig& cfg,
                        int slice_axis) {
  a.check_valid("mean_ssim");
  check_same_dims(a.dims, b.dims, "mean_ssim");
  if (slice_axis < 0 || slice_axis > 2) {
    throw Error::usage(fmt::format(
        "mean_ssim: slice_axis must be 0, 1, or 2, got {}", slice_axis));
  }
  const auto [cols_axis, rows_axis] = slice_plane_axes(slice_axis);
  const int64_t h = a.dims[static_cast<size_t>(rows_axis)];
  const int64_t w = a.dims[static_cast<size_t>(cols_axis)];
  if (h < cfg.window_size || w < cfg.window_size) {
    throw Error::data(fmt::format(
        "mean_ssim: slice plane {}x{} is smaller than the {}x{} window", h, w,
        cfg.window_size, cfg.window_size));
  }
  double sum = 0.0;
  int64_t count = 0;
  const int64_t n_slices = a.dims[static_cast<size_t>(slice_axis)];
  for (int64_t s = 0; s < n_slices; ++s) {
    const Tensor<double> xs = extract_slice(a, slice_axis, s).cast<double>();
    const Tensor<double> ys = extract_slice(b, slice_axis, s).cast<double>();
    const Tensor<double> map = ssim_map_2d(xs, ys, cfg);
    for (int64_t i = 0; i < map.numel(); ++i) sum += map.data()[i];
    count += map.numel();
  }
  return sum / static_cast<double>(count);
}

BinaryMask3 segment_vessels(const Volume& normalized, const BinaryMask3& brain,
                            int64_t min_component_voxels) {
  normalized.check_valid("segment_vessels");
  check_same_dims(normalized.dims, brain.dims, "segment_vessels");
  std::vector<float> inside;
  inside.reserve(normalized.voxels.size());
  for (size_t i = 0; i < normalized.voxels.size(); ++i) {
    if (brain.voxels[i]) inside.push_back(normalized.voxels[i]);
  }
  if (inside.empty()) {
    throw Error::data("segment_vessels: brain mask is empty");
  }
  const double thr = otsu_threshold(inside);
  BinaryMask3 seg = BinaryMask3::create(normalized.dims);
  for (size_t i = 0; i < normalized.voxels.size(); ++i) {
    seg.voxels[i] =
        (brain.voxels[i] && static_cast<double>(normalized.voxels[i]) > thr) ? 1 : 0;
  }
  remove_small_components_6(seg, min_component_voxels);
  return seg;
}

DsiValue dsi(const BinaryMask3& a, const BinaryMask3& b) {
  check_same_dims(a.dims, b.dims, "dsi");
  int64_t na = 0, nb = 0, ni = 0;
  for (size_t i = 0; i < a.voxels.size(); ++i) {
    const bool ia = a.voxels[i] != 0;
    const bool ib = b.voxels[i] != 0;
    na += ia;
    nb += ib;
    ni += ia && ib;
  }
  if (na + nb == 0) {
    return DsiValue{1.0, true};
  }
  return DsiValue{2.0 * static_cast<double>(ni) / static_cast<double>(na + nb),
                  false};
}

namespace {

struct Stat {
  double mean = 0, stddev = 0;
  int64_t n = 0;
};

Stat sample_stat(const std::vector<double>& xs) {
  Stat st;
  st.n = static_cast<int64_t>(xs.size());
  if (xs.empty()) return st;
  for (double x : xs) st.mean += x;
  st.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - st.mean) * (x - st.mean);
    st.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return st;
}

std::string row_flags(const MetricsRow& r) {
  std::string f;
  if (r.psnr_infinite) f += "psnr_infinite";
  if (r.dsi_both_empty) {
    if (!f.empty()) f += ';';
    f += "dsi_both_empty";
  }
  return f;
}

} // namespace

MetricsAggregate MetricsReport::aggregate() const {
  MetricsAggregate agg;
  agg.count = static_cast<int64_t>(rows.size());
  std::vector<double> mse, ssim, ps, ds;
  for (const MetricsRow& r : rows) {
    mse.push_back(r.mse);
    ssim.push_back(r.mean_ssim);
    ds.push_back(r.dsi);
    if (!r.psnr_infinite) ps.push_back(r.psnr_db);
  }
  const Stat sm = sample_stat(mse);
  const Stat st = sample_stat(ssim);
  const Stat sp = sample_stat(ps);
  const Stat sd = sample_stat(ds);
  agg.mse_mean = sm.mean;
  agg.mse_stddev = sm.stddev;
  agg.mean_ssim_mean = st.mean;
  agg.mean_ssim_stddev = st.stddev;
  agg.psnr_mean = sp.mean;
  agg.psnr_stddev = sp.stddev;
  agg.psnr_finite_count = sp.n;
  agg.dsi_mean = sd.mean;
  agg.dsi_stddev = sd.stddev;
  return agg;
}

std::string MetricsReport::csv() const {
  std::string out = "id,mse,mean_ssim,psnr_db,dsi,flags\n";
  for (const MetricsRow& r : rows) {
    out += fmt::format(
        "{},{:.9g},{:.9g},{},{:.9g},{}\n", r.id, r.mse, r.mean_ssim,
        r.psnr_infinite ? std::string("inf") : fmt::format("{:.9g}", r.psnr_db),
        r.dsi, row_flags(r));
  }
  return out;
}

std::string MetricsReport::json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const MetricsRow& r : rows) {
    nlohmann::json row;
    row["id"] = r.id;
    row["mse"] = r.mse;
    row["mean_ssim"] = r.mean_ssim;
    if (r.psnr_infinite) {
      row["psnr_db"] = "inf";
    } else {
      row["psnr_db"] = r.psnr_db;
    }
    row["dsi"] = r.dsi;
    row["flags"] = row_flags(r);
    j["rows"].push_back(std::move(row));
  }
  const MetricsAggregate a = aggregate();
  j["aggregate"] = {
      {"count", a.count},
      {"psnr_finite_count", a.psnr_finite_count},
      {"mse", {{"mean", a.mse_mean}, {"stddev", a.mse_stddev}}},
      {"mean_ssim", {{"mean", a.mean_ssim_mean}, {"stddev", a.mean_ssim_stddev}}},
      {"psnr_db", {{"mean", a.psnr_mean}, {"stddev", a.psnr_stddev}}},
      {"dsi", {{"mean", a.dsi_mean}, {"stddev", a.dsi_stddev}}},
  };
  return j.dump(2) + "\n";
}

MetricsRow evaluate_pair(const std::string& id, const Volume& original,
                         const Volume& reconstruction) {
  check_same_dims(original.dims, reconstruction.dims, "evaluate_pair");
  auto [orig_norm, rec] = normalize(original);

  // The reconstruction is mapped with the original's scale, not its own,
  // so both live in the same unit system.
  Volume recon_norm = Volume::create(reconstruction.dims, reconstruction.spacing);
  const float inv = 1.0f / rec.scale;
  for (size_t i = 0; i < reconstruction.voxels.size(); ++i) {
    recon_norm.voxels[i] =
        std::clamp(reconstruction.voxels[i] * inv, 0.0f, 1.0f);
  }

  const BinaryMask3 brain = brain_mask(orig_norm);

  MetricsRow row;
  row.id = id;
  row.mse = mse_volume(orig_norm, recon_norm, &brain);
  const PsnrValue p = psnr(row.mse, 1.0);
  row.psnr_db = p.db;
  row.psnr_infinite = p.infinite;
  row.mean_ssim = mean_ssim_volume(orig_norm, recon_norm);
  const BinaryMask3 seg_a = segment_vessels(orig_norm, brain);
  const BinaryMask3 seg_b = segment_vessels(recon_norm, brain);
  const DsiValue d = dsi(seg_a, seg_b);
  row.dsi = d.value;
  row.dsi_both_empty = d.both_empty;
  return row;
}

} // namespace tofvae
