#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "tofvae/errors.hpp"
#include "tofvae/version.hpp"
#include "commands.hpp"

using namespace tofvae::cli;

int main(int argc, char** argv) {
  CLI::App app{
      "Volumetric autoencoder toolkit: synthetic angiographic phantoms, "
      "patch-based training, whole-volume reconstruction, similarity metrics, "
      "and anomaly maps"};
  app.set_version_flag("--version", std::string(tofvae::kVersion));
  app.require_subcommand(1);

  PhantomOptions po;
  std::vector<int64_t> phantom_dims{64, 64, 64};
  auto* phantom =
      app.add_subcommand("phantom", "Generate synthetic vascular volumes");
  phantom->add_option("--count", po.count, "Number of volumes")
      ->capture_default_str();
  phantom
      ->add_option("--aneurysm-fraction", po.aneurysm_fraction,
                   "Fraction of volumes carrying an aneurysm")
      ->capture_default_str();
  phantom->add_option("--seed", po.seed, "Base seed; member i uses seed+i")
      ->capture_default_str();
  phantom
      ->add_option("--dim", phantom_dims,
                   "Volume dimensions (three values, each >= 48)")
      ->expected(3);
  phantom->add_option("--out", po.out_dir, "Output directory")->required();

  TrainOptions to;
  auto* train = app.add_subcommand(
      "train", "Train the autoencoder on patches sampled from volumes");
  train->add_option("--config", to.config_path,
                    "JSON config (keys mirror the training settings)");
  train->add_option("--data", to.data_dir, "Directory of training volumes")
      ->required();
  train->add_option("--out", to.out_dir, "Output directory")->required();
  train->add_option("--loss", to.overrides.loss_mode, "l2 or ssim");
  train->add_option("--lr", to.overrides.learning_rate, "Learning rate");
  train->add_option("--batch-size", to.overrides.batch_size, "Batch size");
  train->add_option("--max-epochs", to.overrides.max_epochs, "Epoch limit");
  train->add_option("--patience", to.overrides.patience,
                    "Early-stopping patience in epochs");
  train->add_option("--min-rel-improvement", to.overrides.min_rel_improvement,
                    "Relative validation improvement that resets patience");
  train->add_option("--seed", to.overrides.seed, "Master seed");
  train->add_option("--patches-per-volume", to.overrides.patches_per_volume,
                    "Patches sampled from each volume");
  train->add_option("--validation-fraction", to.overrides.validation_fraction,
                    "Fraction of patches held out for validation");

  ReconstructOptions ro;
  auto* reconstruct = app.add_subcommand(
      "reconstruct", "Reconstruct a volume through a trained model");
  reconstruct->add_option("--model", ro.model_path, "Checkpoint file")
      ->required();
  reconstruct->add_option("--in", ro.input_path, "Input volume")->required();
  reconstruct->add_option("--out", ro.output_path, "Output volume")->required();
  reconstruct->add_option("--axis", ro.slice_axis, "Slicing axis (0, 1, or 2)")
      ->capture_default_str();

  EvaluateOptions eo;
  auto* evaluate = app.add_subcommand(
      "evaluate", "Compare originals with reconstructions (paired by stem)");
  evaluate->add_option("--orig", eo.original_dir, "Directory of originals")
      ->required();
  evaluate
      ->add_option("--recon", eo.reconstruction_dir,
                   "Directory of reconstructions")
      ->required();
  evaluate
      ->add_option("--out", eo.out_base,
                   "Report base path (writes <base>.csv and <base>.json)")
      ->required();

  AnomalyOptions ao;
  auto* anomaly = app.add_subcommand(
      "anomaly", "Similarity map and anomaly mask for one volume pair");
  anomaly->add_option("--orig", ao.original_path, "Original volume")->required();
  anomaly->add_option("--recon", ao.reconstruction_path, "Reconstruction")
      ->required();
  anomaly->add_option("--threshold", ao.threshold, "Anomaly threshold")
      ->capture_default_str();
  anomaly->add_option("--axis", ao.slice_axis, "Slicing axis (0, 1, or 2)")
      ->capture_default_str();
  anomaly->add_option("--out", ao.out_dir, "Output directory")->required();

  GradcheckOptions go;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Verify every gradient against finite differences");
  gradcheck->add_option("--seeds", go.seeds, "Random restarts per op")
      ->capture_default_str();
  gradcheck->add_flag("--skip-model", go.skip_model,
                      "Skip the end-to-end objective checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (phantom->parsed()) {
      std::copy_n(phantom_dims.begin(), 3, po.dims.begin());
      return cmd_phantom(po);
    }
    if (train->parsed()) return cmd_train(to);
    if (reconstruct->parsed()) return cmd_reconstruct(ro);
    if (evaluate->parsed()) return cmd_evaluate(eo);
    if (anomaly->parsed()) return cmd_anomaly(ao);
    if (gradcheck->parsed()) return cmd_gradcheck(go);
  } catch (const tofvae::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 1;
}
