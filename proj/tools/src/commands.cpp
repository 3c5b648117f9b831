#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include <fmt/format.h>

#include "tofvae/checkpoint.hpp"
#include "tofvae/errors.hpp"
#include "tofvae/evaluate.hpp"
#include "tofvae/gradcheck.hpp"
#include "tofvae/inference.hpp"
#include "tofvae/nifti.hpp"
#include "tofvae/phantom.hpp"
#include "tofvae/preprocess.hpp"
#include "tofvae/trainer.hpp"
#include "log.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;

namespace tofvae::cli {

namespace {

// Volume-level patch-sampling substreams; one derivation step per volume
// keeps every volume's draw independent of list order changes elsewhere.
constexpr uint64_t kPatchSeedStream = 21;
constexpr uint64_t kSplitStream = 22;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error::data(
        fmt::format("cannot create directory '{}': {}", dir, ec.message()));
  }
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

bool wants_gzip(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

// Filename minus .nii / .nii.gz, or nullopt for non-volume files.
std::optional<std::string> volume_stem(const std::string& filename) {
  auto strip = [&](const char* suffix) -> std::optional<std::string> {
    const size_t n = std::strlen(suffix);
    if (filename.size() > n &&
        filename.compare(filename.size() - n, n, suffix) == 0) {
      return filename.substr(0, filename.size() - n);
    }
    return std::nullopt;
  };
  if (auto s = strip(".nii.gz")) return s;
  return strip(".nii");
}

bool is_mask_stem(const std::string& stem) {
  auto ends_with = [&](const char* suffix) {
    const size_t n = std::strlen(suffix);
    return stem.size() >= n && stem.compare(stem.size() - n, n, suffix) == 0;
  };
  return ends_with("_vessels") || ends_with("_aneurysm");
}

// Sorted (stem, path) pairs of the non-mask volumes in a directory.
std::vector<std::pair<std::string, std::string>> list_volumes(
    const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw Error::data(fmt::format("'{}' is not a directory", dir));
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto stem = volume_stem(entry.path().filename().string());
    if (!stem || is_mask_stem(*stem)) continue;
    out.emplace_back(*stem, entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error::data(fmt::format("cannot write '{}'", path));
  f << text;
  if (!f) throw Error::data(fmt::format("write to '{}' failed", path));
}

} // namespace

int cmd_phantom(const PhantomOptions& opts) {
  ensure_dir(opts.out_dir);
  PhantomSpec proto;
  proto.dims = opts.dims;
  const auto cohort =
      generate_cohort(opts.count, opts.aneurysm_fraction, opts.seed, proto);

  RunManifest manifest;
  manifest.command = "phantom";
  manifest.config = {
      {"count", opts.count},
      {"aneurysm_fraction", opts.aneurysm_fraction},
      {"seed", opts.seed},
      {"dims", {opts.dims[0], opts.dims[1], opts.dims[2]}},
  };

  std::string labels = "id,label,seed\n";
  for (size_t i = 0; i < cohort.size(); ++i) {
    const auto& member = cohort[i];
    const std::string id = fmt::format("phantom_{:03d}", i);
    const auto path = [&](const char* suffix) {
      return (fs::path(opts.out_dir) / fmt::format("{}{}.nii.gz", id, suffix))
          .string();
    };
    write_nifti(member.phantom.volume, path(""), /*gzip=*/true);
    manifest.outputs.push_back(path(""));
    write_mask_nifti(member.phantom.vessel_mask, member.phantom.volume.spacing,
                     path("_vessels"), /*gzip=*/true);
    manifest.outputs.push_back(path("_vessels"));
    if (member.phantom.has_aneurysm) {
      write_mask_nifti(member.phantom.aneurysm_mask,
                       member.phantom.volume.spacing, path("_aneurysm"),
                       /*gzip=*/true);
      manifest.outputs.push_back(path("_aneurysm"));
    }
    labels += fmt::format("{},{},{}\n", id, member.label ? 1 : 0, member.seed);
    log_debug("wrote {} (label {})", id, member.label ? 1 : 0);
  }

  const std::string labels_path = (fs::path(opts.out_dir) / "labels.csv").string();
  write_text_file(labels_path, labels);
  manifest.outputs.push_back(labels_path);
  write_manifest(manifest, (fs::path(opts.out_dir) / "manifest.json").string());
  log_info("phantom: wrote {} volumes to {}", cohort.size(), opts.out_dir);
  return 0;
}

int cmd_train(const TrainOptions& opts) {
  const TrainConfig cfg = resolve_train_config(opts.config_path, opts.overrides);
  ensure_dir(opts.out_dir);

  const auto volumes = list_volumes(opts.data_dir);
  if (volumes.empty()) {
    throw Error::data(
        fmt::format("no .nii/.nii.gz volumes found in '{}'", opts.data_dir));
  }

  // Per-volume patch harvest under a volume-indexed substream.
  std::vector<Tensor<float>> patch_sets;
  int64_t total = 0;
  RunManifest manifest;
  manifest.command = "train";
  for (size_t i = 0; i < volumes.size(); ++i) {
    const Volume vol = read_nifti(volumes[i].second);
    auto [norm, rec] = normalize(vol);
    const BinaryMask3 brain = brain_mask(norm);
    PatchConfig pc;
    pc.patches_per_volume = cfg.patches_per_volume;
    pc.seed = rng::derive(rng::derive(cfg.seed, kPatchSeedStream),
                          static_cast<uint64_t>(i));
    PatchBatch batch = sample_patches(norm, brain, pc);
    total += batch.patches.shape().n;
    patch_sets.push_back(std::move(batch.patches));
    manifest.inputs.push_back(volumes[i].second);
    log_debug("sampled {} patches from {}", cfg.patches_per_volume,
              volumes[i].first);
  }

  Tensor<float> all(Shape4{total, 1, 32, 32});
  {
    int64_t row = 0;
    constexpr int64_t kStride = 32 * 32;
    for (const auto& set : patch_sets) {
      std::memcpy(all.data() + row * kStride, set.data(),
                  static_cast<size_t>(set.numel()) * sizeof(float));
      row += set.shape().n;
    }
  }

  // Seeded split into train/validation patch sets.
  std::vector<int64_t> order(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i) order[static_cast<size_t>(i)] = i;
  rng::Prng split_rng(rng::derive(cfg.seed, kSplitStream));
  for (int64_t i = total - 1; i > 0; --i) {
    const int64_t j = static_cast<int64_t>(
        split_rng.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  const int64_t val_count = std::llround(static_cast<double>(total) *
                                         cfg.validation_fraction);
  const int64_t train_count = total - val_count;
  if (train_count < 1 || val_count < 1) {
    throw Error::usage(fmt::format(
        "train: validation_fraction {} leaves {} training and {} validation "
        "patches",
        cfg.validation_fraction, train_count, val_count));
  }
  auto gather = [&](int64_t first, int64_t count) {
    Tensor<float> out(Shape4{count, 1, 32, 32});
    constexpr int64_t kStride = 32 * 32;
    for (int64_t i = 0; i < count; ++i) {
      std::memcpy(out.data() + i * kStride,
                  all.data() + order[static_cast<size_t>(first + i)] * kStride,
                  kStride * sizeof(float));
    }
    return out;
  };
  const Tensor<float> val_patches = gather(0, val_count);
  const Tensor<float> train_patches = gather(val_count, train_count);

  const std::string model_path = (fs::path(opts.out_dir) / "model.avae").string();
  const VaeArchitecture arch = VaeArchitecture::standard();
  const auto t0 = std::chrono::steady_clock::now();
  const CheckpointHook on_best = [&](const VaeParams<float>& params,
                                     int64_t epoch, double val_loss) {
    save_checkpoint(model_path, params, arch, cfg.loss_mode, kNormalizationTag);
    log_info("epoch {}: validation {:.6g} (checkpoint updated)", epoch, val_loss);
  };

  const TrainResult result =
      train(train_patches, val_patches, arch, cfg, on_best);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::string log_path = (fs::path(opts.out_dir) / "train_log.csv").string();
  write_text_file(log_path, result.log.csv());
  save_checkpoint(model_path, result.params, arch, cfg.loss_mode,
                  kNormalizationTag);

  manifest.config = train_config_json(cfg);
  manifest.config["data_dir"] = opts.data_dir;
  manifest.outputs = {model_path, log_path};
  write_manifest(manifest, (fs::path(opts.out_dir) / "manifest.json").string());
  log_info(
      "train: {} epochs in {:.1f}s, best validation {:.6g} at epoch {} -> {}",
      result.log.epochs.size(), elapsed, result.best_val, result.best_epoch,
      model_path);
  return 0;
}

int cmd_reconstruct(const ReconstructOptions& opts) {
  const VaeArchitecture arch = VaeArchitecture::standard();
  auto [params, meta] = load_checkpoint(opts.model_path, arch);
  if (meta.normalization != kNormalizationTag) {
    throw Error::data(fmt::format(
        "checkpoint '{}' was trained with normalization '{}', but this tool "
        "prepares volumes as '{}'",
        opts.model_path, meta.normalization, kNormalizationTag));
  }
  const Volume input = read_nifti(opts.input_path);
  const ReconstructionPair pair =
      reconstruct_and_rescale(arch, params, input, opts.slice_axis);
  ensure_parent_dir(opts.output_path);
  write_nifti(pair.reconstruction, opts.output_path, wants_gzip(opts.output_path));

  RunManifest manifest;
  manifest.command = "reconstruct";
  manifest.config = {{"model", opts.model_path},
                     {"slice_axis", opts.slice_axis},
                     {"loss_mode", loss_mode_name(meta.loss_mode)},
                     {"normalization_scale", pair.record.scale}};
  manifest.inputs = {opts.model_path, opts.input_path};
  manifest.outputs = {opts.output_path};
  write_manifest(manifest, opts.output_path + ".manifest.json");
  log_info("reconstruct: {} -> {}", opts.input_path, opts.output_path);
  return 0;
}

int cmd_evaluate(const EvaluateOptions& opts) {
  const auto originals = list_volumes(opts.original_dir);
  const auto recons = list_volumes(opts.reconstruction_dir);
  std::map<std::string, std::string> recon_by_stem(recons.begin(), recons.end());

  std::vector<std::string> unmatched;
  for (const auto& [stem, path] : originals) {
    if (!recon_by_stem.count(stem)) unmatched.push_back(stem + " (no reconstruction)");
  }
  {
    std::map<std::string, std::string> orig_by_stem(originals.begin(),
                                                    originals.end());
    for (const auto& [stem, path] : recons) {
      if (!orig_by_stem.count(stem)) unmatched.push_back(stem + " (no original)");
    }
  }
  if (!unmatched.empty()) {
    throw Error::data(fmt::format("evaluate: unmatched ids: {}",
                                  fmt::join(unmatched, ", ")));
  }
  if (originals.empty()) {
    throw Error::data(fmt::format("evaluate: no volume pairs found under '{}'",
                                  opts.original_dir));
  }

  MetricsReport report;
  RunManifest manifest;
  manifest.command = "evaluate";
  for (const auto& [stem, path] : originals) {
    const Volume orig = read_nifti(path);
    const Volume recon = read_nifti(recon_by_stem.at(stem));
    report.rows.push_back(evaluate_pair(stem, orig, recon));
    manifest.inputs.push_back(path);
    manifest.inputs.push_back(recon_by_stem.at(stem));
    log_debug("evaluated {}", stem);
  }

  ensure_parent_dir(opts.out_base + ".csv");
  write_text_file(opts.out_base + ".csv", report.csv());
  write_text_file(opts.out_base + ".json", report.json());
  manifest.config = {{"original_dir", opts.original_dir},
                     {"reconstruction_dir", opts.reconstruction_dir}};
  manifest.outputs = {opts.out_base + ".csv", opts.out_base + ".json"};
  write_manifest(manifest, opts.out_base + ".manifest.json");

  const MetricsAggregate agg = report.aggregate();
  log_info(
      "evaluate: {} pairs, mean mse {:.6g}, mean similarity {:.6g}, mean dice "
      "{:.6g}",
      agg.count, agg.mse_mean, agg.mean_ssim_mean, agg.dsi_mean);
  return 0;
}

int cmd_anomaly(const AnomalyOptions& opts) {
  const Volume orig = read_nifti(opts.original_path);
  const Volume recon = read_nifti(opts.reconstruction_path);
  check_same_dims(orig.dims, recon.dims, "anomaly");

  auto [orig_norm, rec] = normalize(orig);
  Volume recon_norm = Volume::create(recon.dims, recon.spacing);
  const float inv = 1.0f / rec.scale;
  for (size_t i = 0; i < recon.voxels.size(); ++i) {
    recon_norm.voxels[i] = std::clamp(recon.voxels[i] * inv, 0.0f, 1.0f);
  }
  const BinaryMask3 brain = brain_mask(orig_norm);
  const AnomalyResult result =
      anomaly_map(orig_norm, recon_norm, brain, SsimConfig{}, opts.threshold,
                  opts.slice_axis);

  ensure_dir(opts.out_dir);
  const std::string map_path = (fs::path(opts.out_dir) / "ssim_map.nii.gz").string();
  const std::string mask_path =
      (fs::path(opts.out_dir) / "anomaly_mask.nii.gz").string();
  write_nifti(result.map, map_path, /*gzip=*/true);
  write_mask_nifti(result.mask, orig.spacing, mask_path, /*gzip=*/true);

  RunManifest manifest;
  manifest.command = "anomaly";
  manifest.config = {{"threshold", opts.threshold},
                     {"slice_axis", opts.slice_axis}};
  manifest.inputs = {opts.original_path, opts.reconstruction_path};
  manifest.outputs = {map_path, mask_path};
  write_manifest(manifest, (fs::path(opts.out_dir) / "manifest.json").string());
  log_info("anomaly: flagged {} voxels below {} -> {}", result.mask.count(),
           opts.threshold, opts.out_dir);
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& opts) {
  if (opts.seeds < 1) {
    throw Error::usage("gradcheck: --seeds must be >= 1");
  }
  const auto reports = run_gradcheck_suite(static_cast<int>(opts.seeds),
                                           !opts.skip_model);
  fmt::print("{:<24} {:>12} {:>12} {:>8}  {}\n", "op", "max_rel_err",
             "tolerance", "coords", "status");
  std::vector<std::string> failing;
  for (const auto& r : reports) {
    fmt::print("{:<24} {:>12.3e} {:>12.1e} {:>8}  {}\n", r.op, r.max_rel_err,
               r.tolerance, r.coords_checked, r.passed ? "pass" : "FAIL");
    if (!r.passed) failing.push_back(r.op);
  }
  if (!failing.empty()) {
    throw Error::numeric(fmt::format("gradient check failed for: {}",
                                     fmt::join(failing, ", ")));
  }
  log_info("gradcheck: {} ops verified", reports.size());
  return 0;
}

} // namespace tofvae::cli
