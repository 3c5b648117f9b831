#include "tofvae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include <fmt/format.h>

#include "tofvae/errors.hpp"

namespace tofvae {

namespace {

constexpr uint64_t kInitStream = 11;
constexpr uint64_t kShuffleStream = 12;
constexpr uint64_t kTrainEpsStream = 13;
constexpr uint64_t kValEpsStream = 14;

void check_patch_tensor(const Tensor<float>& t, const char* what,
                        int64_t batch_size) {
  const Shape4& s = t.shape();
  if (s.n < batch_size || s.c != 1 || s.h != 32 || s.w != 32) {
    throw Error::data(fmt::format(
        "train: {} must be Nx1x32x32 with N >= batch_size ({}), got "
        "{}x{}x{}x{}",
        what, batch_size, s.n, s.c, s.h, s.w));
  }
  if (!t.all_finite()) {
    throw Error::data(fmt::format("train: {} contains non-finite values", what));
  }
}

Tensor<float> gather_batch(const Tensor<float>& patches,
                           const std::vector<int64_t>& order, int64_t first,
                           int64_t count) {
  const Shape4& s = patches.shape();
  const int64_t stride = s.c * s.h * s.w;
  Tensor<float> batch(Shape4{count, s.c, s.h, s.w});
  for (int64_t i = 0; i < count; ++i) {
    const int64_t src = order[static_cast<size_t>(first + i)];
    std::memcpy(batch.data() + i * stride, patches.data() + src * stride,
                static_cast<size_t>(stride) * sizeof(float));
  }
  return batch;
}

struct ForwardLoss {
  LossBreakdown breakdown;
  typename Tape<float>::Id root;
};

// Builds the full objective on the given tape. Parameters are registered
// by the caller so it controls whether gradients flow.
ForwardLoss build_loss(Tape<float>& tape, const VaeArchitecture& arch,
                       const VaeNodeIds<float>& ids, const Tensor<float>& batch,
                       const LossConfig& loss_cfg, rng::Prng& eps_rng) {
  const auto x = tape.constant(batch);
  const LatentNodes<float> latent = encode_on_tape(tape, arch, ids, x);
  const auto z = reparameterize_on_tape(tape, arch, latent, eps_rng,
                                        /*deterministic=*/false);
  const auto recon = decode_on_tape(tape, arch, ids, z);
  auto [root, breakdown] =
      total_loss(tape, x, recon, latent.mu, latent.logvar, loss_cfg);
  return ForwardLoss{breakdown, root};
}

LossBreakdown validate_epoch(const VaeParams<float>& params,
                             const VaeArchitecture& arch,
                             const Tensor<float>& val_patches,
                             const TrainConfig& cfg, int64_t epoch) {
  // Fixed per-epoch sampling seed: the validation number is reproducible
  // for a given epoch without freezing the latent noise to zero.
  rng::Prng eps_rng(rng::derive(rng::derive(cfg.seed, kValEpsStream),
                                static_cast<uint64_t>(epoch)));
  const LossConfig loss_cfg = cfg.loss_config();
  const Shape4& vs = val_patches.shape();
  const int64_t n = vs.n;
  const int64_t stride = vs.c * vs.h * vs.w;

  // Per-batch losses are per-sample means, so a count-weighted average
  // reproduces the loss of the whole set, partial tail batch included.
  LossBreakdown sum{};
  int64_t seen = 0;
  for (int64_t first = 0; first < n; first += cfg.batch_size) {
    const int64_t count = std::min(cfg.batch_size, n - first);
    Tensor<float> batch(Shape4{count, vs.c, vs.h, vs.w});
    std::memcpy(batch.data(), val_patches.data() + first * stride,
                static_cast<size_t>(count * stride) * sizeof(float));
    Tape<float> tape;
    const VaeNodeIds<float> ids =
        register_params(tape, params, /*requires_grad=*/false);
    const ForwardLoss fl = build_loss(tape, arch, ids, batch, loss_cfg, eps_rng);
    const double w = static_cast<double>(count);
    sum.total += w * fl.breakdown.total;
    sum.recon += w * fl.breakdown.recon;
    sum.kl += w * fl.breakdown.kl;
    seen += count;
  }
  const double inv = 1.0 / static_cast<double>(seen);
  return LossBreakdown{sum.total * inv, sum.recon * inv, sum.kl * inv};
}

} // namespace

double TrainConfig::resolved_lr() const {
  if (learning_rate > 0.0) return learning_rate;
  return loss_mode == LossMode::L2 ? 0.01 : 0.001;
}

LossConfig TrainConfig::loss_config() const {
  LossConfig cfg;
  cfg.mode = loss_mode;
  return cfg;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error::usage("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw Error::usage("train config: max_epochs must be >= 1");
  if (patience < 1) throw Error::usage("train config: patience must be >= 1");
  if (!(min_rel_improvement > 0.0) || min_rel_improvement >= 1.0) {
    throw Error::usage(fmt::format(
        "train config: min_rel_improvement must lie in (0, 1), got {}",
        min_rel_improvement));
  }
  if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
    throw Error::usage(fmt::format(
        "train config: learning_rate must be >= 0 (0 selects the default), "
        "got {}",
        learning_rate));
  }
  if (patches_per_volume < 1) {
    throw Error::usage("train config: patches_per_volume must be >= 1");
  }
  if (!(validation_fraction >= 0.0) || validation_fraction >= 1.0) {
    throw Error::usage(fmt::format(
        "train config: validation_fraction must lie in [0, 1), got {}",
        validation_fraction));
  }
}

std::string TrainLog::csv() const {
  std::string out =
      "epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl,"
      "wall_time_s\n";
  for (const EpochRecord& r : epochs) {
    out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.3f}\n",
                       r.epoch, r.train_total, r.train_recon, r.train_kl,
                       r.val_total, r.val_recon, r.val_kl, r.wall_time_s);
  }
  return out;
}

AdamState AdamState::init(const VaeParams<float>& params) {
  AdamState st;
  st.slots.reserve(params.entries.size() * 2);
  for (const auto& e : params.entries) {
    st.slots.push_back(Slot{Tensor<float>(e.weight.shape()), Tensor<float>(e.weight.shape())});
    st.slots.push_back(Slot{Tensor<float>(e.bias.shape()), Tensor<float>(e.bias.shape())});
  }
  return st;
}

void adam_step(VaeParams<float>& params, const std::vector<Tensor<float>>& grads,
               AdamState& state, double lr) {
  const size_t n_slots = params.entries.size() * 2;
  if (grads.size() != n_slots || state.slots.size() != n_slots) {
    throw Error::data(fmt::format(
        "adam_step: expected {} gradient tensors (weight and bias per layer), "
        "got {} with {} state slots",
        n_slots, grads.size(), state.slots.size()));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (size_t s = 0; s < n_slots; ++s) {
    auto& entry = params.entries[s / 2];
    Tensor<float>& p = (s % 2 == 0) ? entry.weight : entry.bias;
    const Tensor<float>& g = grads[s];
    if (!(g.shape() == p.shape())) {
      throw Error::data(fmt::format(
          "adam_step: gradient shape mismatch for layer '{}' {}", entry.name,
          (s % 2 == 0) ? "weight" : "bias"));
    }
    if (!g.all_finite()) {
      throw Error::numeric(fmt::format(
          "adam_step: non-finite gradient for layer '{}' {}", entry.name,
          (s % 2 == 0) ? "weight" : "bias"));
    }
    AdamState::Slot& slot = state.slots[s];
    float* pd = p.data();
    float* md = slot.m.data();
    float* vd = slot.v.data();
    const float* gd = g.data();
    const int64_t numel = p.numel();
    for (int64_t i = 0; i < numel; ++i) {
      const double gi = static_cast<double>(gd[i]);
      const double m = state.beta1 * static_cast<double>(md[i]) + (1.0 - state.beta1) * gi;
      const double v = state.beta2 * static_cast<double>(vd[i]) + (1.0 - state.beta2) * gi * gi;
      md[i] = static_cast<float>(m);
      vd[i] = static_cast<float>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      pd[i] = static_cast<float>(static_cast<double>(pd[i]) -
                                 lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

TrainResult train(const Tensor<float>& train_patches,
                  const Tensor<float>& val_patches, const VaeArchitecture& arch,
                  const TrainConfig& cfg, const CheckpointHook& on_best) {
  cfg.validate();
  check_patch_tensor(train_patches, "training patches", cfg.batch_size);
  check_patch_tensor(val_patches, "validation patches", cfg.batch_size);

  VaeParams<float> params = init_params<float>(arch, rng::derive(cfg.seed, kInitStream));
  AdamState adam = AdamState::init(params);
  rng::Prng shuffle_rng(rng::derive(cfg.seed, kShuffleStream));
  rng::Prng train_eps(rng::derive(cfg.seed, kTrainEpsStream));
  const LossConfig loss_cfg = cfg.loss_config();
  const double lr = cfg.resolved_lr();

  const int64_t n_train = train_patches.shape().n;
  std::vector<int64_t> order(static_cast<size_t>(n_train));
  for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  int64_t stale_epochs = 0;

  for (int64_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    for (int64_t i = n_train - 1; i > 0; --i) {
      const int64_t j = static_cast<int64_t>(
          shuffle_rng.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    LossBreakdown train_sum{};
    const int64_t n_batches = n_train / cfg.batch_size; // drop the partial tail
    for (int64_t b = 0; b < n_batches; ++b) {
      const Tensor<float> batch =
          gather_batch(train_patches, order, b * cfg.batch_size, cfg.batch_size);
      Tape<float> tape;
      const VaeNodeIds<float> ids =
          register_params(tape, params, /*requires_grad=*/true);
      const ForwardLoss fl =
          build_loss(tape, arch, ids, batch, loss_cfg, train_eps);
      train_sum.total += fl.breakdown.total;
      train_sum.recon += fl.breakdown.recon;
      train_sum.kl += fl.breakdown.kl;

      auto grads = tape.backward(fl.root);
      std::vector<Tensor<float>> grad_list;
      grad_list.reserve(ids.layers.size() * 2);
      for (const auto& layer : ids.layers) {
        for (const auto id : {layer.weight, layer.bias}) {
          auto it = grads.find(id);
          grad_list.push_back(it != grads.end()
                                  ? std::move(it->second)
                                  : Tensor<float>(tape.value(id).shape()));
        }
      }
      adam_step(params, grad_list, adam, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const double inv_b = 1.0 / static_cast<double>(std::max<int64_t>(1, n_batches));
    rec.train_total = train_sum.total * inv_b;
    rec.train_recon = train_sum.recon * inv_b;
    rec.train_kl = train_sum.kl * inv_b;

    const LossBreakdown val = validate_epoch(params, arch, val_patches, cfg, epoch);
    rec.val_total = val.total;
    rec.val_recon = val.recon;
    rec.val_kl = val.kl;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);

    if (!std::isfinite(val.total)) {
      throw Error::numeric(fmt::format(
          "train: validation loss became non-finite at epoch {} (last saved "
          "checkpoint is still the best earlier epoch)",
          epoch));
    }

    const bool improved =
        val.total < result.best_val * (1.0 - cfg.min_rel_improvement) ||
        !std::isfinite(result.best_val);
    if (improved) {
      result.best_val = val.total;
      result.best_epoch = epoch;
      result.params = params; // deep copy of the current tensors
      stale_epochs = 0;
      if (on_best) on_best(params, epoch, val.total);
    } else {
      ++stale_epochs;
      if (stale_epochs >= cfg.patience) break;
    }
  }
  return result;
}

} // namespace tofvae
