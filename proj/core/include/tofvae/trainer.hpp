#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tofvae/losses.hpp"
#include "tofvae/vae.hpp"

namespace tofvae {

struct TrainConfig {
  LossMode loss_mode = LossMode::L2;
  double learning_rate = 0.0; // 0 selects the per-mode default
  int64_t batch_size = 100;
  int64_t max_epochs = 20;
  int64_t patience = 5;
  double min_rel_improvement = 1e-3; // fraction of best val loss
  uint64_t seed = 0;
  // Data-assembly knobs consumed by callers that build patch sets; the
  // training loop itself only sees finished tensors.
  int64_t patches_per_volume = 1000;
  double validation_fraction = 0.2;

  double resolved_lr() const; // 0.01 for L2, 0.001 for the similarity loss
  LossConfig loss_config() const;
  void validate() const;
};

struct EpochRecord {
  int64_t epoch = 0; // 1-based
  double train_total = 0, train_recon = 0, train_kl = 0;
  double val_total = 0, val_recon = 0, val_kl = 0;
  double wall_time_s = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  // Header: epoch,train_total,train_recon,train_kl,val_total,val_recon,
  // val_kl,wall_time_s. All columns except wall_time_s are deterministic
  // for a fixed config and seed.
  std::string csv() const;
};

// First-moment/second-moment state per parameter tensor, entry order
// (weight, bias) per layer matching VaeParams.
struct AdamState {
  struct Slot {
    Tensor<float> m;
    Tensor<float> v;
  };
  std::vector<Slot> slots;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const VaeParams<float>& params);
};

// One bias-corrected update. grads holds one tensor per slot in slot
// order; a non-finite gradient raises a numeric error naming the tensor.
void adam_step(VaeParams<float>& params, const std::vector<Tensor<float>>& grads,
               AdamState& state, double lr);

struct TrainResult {
  VaeParams<float> params; // parameters from the best-validation epoch
  TrainLog log;
  int64_t best_epoch = 0;
  double best_val = 0;
};

// Invoked whenever validation improves, before training continues; gives
// callers a persistence point that survives later divergence.
using CheckpointHook =
    std::function<void(const VaeParams<float>&, int64_t epoch, double val_loss)>;

// Patch tensors are N x 1 x 32 x 32; training needs at least one full
// batch in each set. Batches of batch_size are drawn from a seeded shuffle
// each epoch, dropping the last partial batch. Validation runs after every
// epoch with epoch-seeded latent sampling; training stops once validation
// has not improved by min_rel_improvement (relative) for patience epochs.
// A non-finite validation loss raises a numeric error.
TrainResult train(const Tensor<float>& train_patches,
                  const Tensor<float>& val_patches, const VaeArchitecture& arch,
                  const TrainConfig& cfg, const CheckpointHook& on_best = nullptr);

} // namespace tofvae
