#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "tofvae/errors.hpp"
#include "tofvae/rng.hpp"
#include "tofvae/trainer.hpp"

using namespace tofvae;

namespace {

Tensor<float> noise_patches(int64_t n, uint64_t seed) {
  rng::Prng r(seed);
  Tensor<float> t({n, 1, 32, 32});
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(r.uniform());
  return t;
}

bool params_equal(const VaeParams<float>& a, const VaeParams<float>& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (size_t i = 0; i < a.entries.size(); ++i) {
    if (!(a.entries[i].weight == b.entries[i].weight)) return false;
    if (!(a.entries[i].bias == b.entries[i].bias)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config resolves per-mode learning rates and rejects bad values") {
  TrainConfig cfg;
  cfg.loss_mode = LossMode::L2;
  CHECK(cfg.resolved_lr() == 0.01);
  cfg.loss_mode = LossMode::Ssim;
  CHECK(cfg.resolved_lr() == 0.001);
  cfg.learning_rate = 0.005;
  CHECK(cfg.resolved_lr() == 0.005);

  auto reject = [](auto&& mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), Error);
  };
  reject([](TrainConfig& c) { c.batch_size = 0; });
  reject([](TrainConfig& c) { c.max_epochs = 0; });
  reject([](TrainConfig& c) { c.patience = 0; });
  reject([](TrainConfig& c) { c.min_rel_improvement = 0.0; });
  reject([](TrainConfig& c) { c.min_rel_improvement = 1.0; });
  reject([](TrainConfig& c) { c.learning_rate = -1.0; });
  reject([](TrainConfig& c) { c.validation_fraction = 1.0; });
  reject([](TrainConfig& c) { c.patches_per_volume = 0; });
  TrainConfig ok;
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("first adam step moves parameters by about the learning rate") {
  VaeParams<float> params;
  params.entries.push_back(
      {"w", Tensor<float>::from({1, 1, 1, 2}, {1.0f, -3.0f}),
       Tensor<float>::from({1, 1, 1, 1}, {0.5f})});
  AdamState st = AdamState::init(params);
  REQUIRE(st.slots.size() == 2);

  const std::vector<Tensor<float>> grads = {
      Tensor<float>::from({1, 1, 1, 2}, {0.5f, -2.0f}),
      Tensor<float>::from({1, 1, 1, 1}, {0.0f})};
  adam_step(params, grads, st, 0.01);

  // bias correction makes the first update lr * g / (|g| + eps)
  CHECK(params.entries[0].weight.data()[0] ==
        doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(params.entries[0].weight.data()[1] ==
        doctest::Approx(-3.0 + 0.01).epsilon(1e-6));
  // zero gradient leaves the parameter untouched
  CHECK(params.entries[0].bias.data()[0] == 0.5f);
  CHECK(st.step == 1);
}

TEST_CASE("adam rejects mismatched or non-finite gradients") {
  VaeParams<float> params;
  params.entries.push_back({"enc1", Tensor<float>({2, 1, 3, 3}, 0.1f),
                            Tensor<float>({1, 2, 1, 1}, 0.0f)});
  AdamState st = AdamState::init(params);

  std::vector<Tensor<float>> too_few = {Tensor<float>({2, 1, 3, 3}, 0.0f)};
  CHECK_THROWS_AS(adam_step(params, too_few, st, 0.01), Error);

  std::vector<Tensor<float>> wrong_shape = {Tensor<float>({1, 1, 3, 3}, 0.0f),
                                            Tensor<float>({1, 2, 1, 1}, 0.0f)};
  CHECK_THROWS_AS(adam_step(params, wrong_shape, st, 0.01), Error);

  std::vector<Tensor<float>> with_nan = {Tensor<float>({2, 1, 3, 3}, 0.0f),
                                         Tensor<float>({1, 2, 1, 1}, 0.0f)};
  with_nan[0].data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    adam_step(params, with_nan, st, 0.01);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("enc1") != std::string::npos);
    CHECK(std::string(e.what()).find("weight") != std::string::npos);
  }
}

TEST_CASE("training rejects undersized or malformed patch sets") {
  const VaeArchitecture arch = VaeArchitecture::standard();
  TrainConfig cfg;
  cfg.max_epochs = 1;
  CHECK_THROWS_AS(train(noise_patches(99, 1), noise_patches(100, 2), arch, cfg),
                  Error);
  CHECK_THROWS_AS(train(noise_patches(100, 1), noise_patches(50, 2), arch, cfg),
                  Error);
  CHECK_THROWS_AS(
      train(Tensor<float>({100, 1, 16, 16}, 0.5f), noise_patches(100, 2), arch, cfg),
      Error);
  Tensor<float> bad = noise_patches(100, 1);
  bad.data()[5] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(train(bad, noise_patches(100, 2), arch, cfg), Error);
}

TEST_CASE("patience stops training after consecutive stale epochs") {
  const VaeArchitecture arch = VaeArchitecture::standard();
  const Tensor<float> tr = noise_patches(100, 11);
  const Tensor<float> va = noise_patches(100, 12);

  TrainConfig cfg;
  cfg.loss_mode = LossMode::L2;
  cfg.max_epochs = 10;
  cfg.patience = 2;
  // demand a 99.9% drop per epoch: only the first epoch can ever improve
  cfg.min_rel_improvement = 0.999;
  cfg.seed = 3;

  std::vector<int64_t> hook_epochs;
  VaeParams<float> hook_params;
  const TrainResult res =
      train(tr, va, arch, cfg, [&](const VaeParams<float>& p, int64_t e, double) {
        hook_epochs.push_back(e);
        hook_params = p;
      });

  // epoch 1 improves over infinity; epochs 2 and 3 are stale, then stop
  CHECK(res.log.epochs.size() == 3);
  CHECK(res.best_epoch == 1);
  CHECK(res.best_val == res.log.epochs[0].val_total);
  REQUIRE(hook_epochs.size() == 1);
  CHECK(hook_epochs[0] == 1);
  CHECK(params_equal(res.params, hook_params));
  CHECK(res.params.all_finite());
  for (const EpochRecord& r : res.log.epochs) {
    CHECK(std::isfinite(r.val_total));
    CHECK(r.val_total == doctest::Approx(r.val_recon + r.val_kl).epsilon(1e-6));
    CHECK(r.train_total == doctest::Approx(r.train_recon + r.train_kl).epsilon(1e-6));
  }
}

TEST_CASE("log serializes with the pinned header") {
  TrainLog log;
  log.epochs.push_back(EpochRecord{1, 10.5, 10.0, 0.5, 11.25, 10.75, 0.5, 2.125});
  const std::string csv = log.csv();
  CHECK(csv.rfind("epoch,train_total,train_recon,train_kl,val_total,val_recon,"
                  "val_kl,wall_time_s\n",
                  0) == 0);
  CHECK(csv.find("\n1,10.5,10,0.5,11.25,10.75,0.5,2.125\n") != std::string::npos);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const VaeArchitecture arch = VaeArchitecture::standard();
  const Tensor<float> tr = noise_patches(120, 21);
  const Tensor<float> va = noise_patches(100, 22);

  TrainConfig cfg;
  cfg.loss_mode = LossMode::L2;
  cfg.max_epochs = 2;
  cfg.seed = 7;

  const TrainResult a = train(tr, va, arch, cfg);
  const TrainResult b = train(tr, va, arch, cfg);
  REQUIRE(a.log.epochs.size() == b.log.epochs.size());
  for (size_t i = 0; i < a.log.epochs.size(); ++i) {
    // wall time is the one column allowed to vary between runs
    CHECK(a.log.epochs[i].train_total == b.log.epochs[i].train_total);
    CHECK(a.log.epochs[i].train_recon == b.log.epochs[i].train_recon);
    CHECK(a.log.epochs[i].train_kl == b.log.epochs[i].train_kl);
    CHECK(a.log.epochs[i].val_total == b.log.epochs[i].val_total);
  }
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(params_equal(a.params, b.params));

  TrainConfig other = cfg;
  other.seed = 8;
  const TrainResult c = train(tr, va, arch, other);
  CHECK(a.log.epochs[0].train_total != c.log.epochs[0].train_total);
}

}  // TEST_SUITE
