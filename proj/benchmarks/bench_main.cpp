#include <benchmark/benchmark.h>

#include "tofvae/gradcheck.hpp"
#include "tofvae/inference.hpp"
#include "tofvae/losses.hpp"
#include "tofvae/phantom.hpp"
#include "tofvae/rng.hpp"
#include "tofvae/tensor.hpp"
#include "tofvae/trainer.hpp"
#include "tofvae/vae.hpp"

using namespace tofvae;

namespace {

Tensor<float> random_batch(Shape4 shape, uint64_t seed) {
  rng::Prng prng(seed);
  Tensor<float> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(prng.uniform());
  return t;
}

// enc1 geometry: the most-executed convolution shape in training.
const ConvSpec kEnc1{.kh = 4, .kw = 4, .sh = 2, .sw = 2, .ph = 1, .pw = 1,
                     .in_channels = 1, .out_channels = 32};

void bm_conv2d_forward(benchmark::State& state) {
  const auto batch = static_cast<int64_t>(state.range(0));
  const Tensor<float> x = random_batch({batch, 1, 32, 32}, 1);
  const Tensor<float> w = random_batch({32, 1, 4, 4}, 2);
  const Tensor<float> b = random_batch({1, 32, 1, 1}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::conv2d_forward(x, w, b, kEnc1));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_conv2d_forward)->Arg(1)->Arg(20)->Arg(100);

void bm_conv2d_backward_weight(benchmark::State& state) {
  const auto batch = static_cast<int64_t>(state.range(0));
  const Tensor<float> x = random_batch({batch, 1, 32, 32}, 1);
  const Tensor<float> grad = random_batch({batch, 32, 16, 16}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        kernels::conv2d_backward_weight(x, {32, 1, 4, 4}, grad, kEnc1));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_conv2d_backward_weight)->Arg(20)->Arg(100);

void bm_conv2d_backward_input(benchmark::State& state) {
  const auto batch = static_cast<int64_t>(state.range(0));
  const Tensor<float> w = random_batch({32, 1, 4, 4}, 2);
  const Tensor<float> grad = random_batch({batch, 32, 16, 16}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::conv2d_backward_input(
        {batch, 1, 32, 32}, w, grad, kEnc1));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_conv2d_backward_input)->Arg(20)->Arg(100);

void bm_ssim_map_eval(benchmark::State& state) {
  const auto side = static_cast<int64_t>(state.range(0));
  rng::Prng prng(5);
  const Tensor<double> x = random_tensor({1, 1, side, side}, prng, 0.0, 1.0);
  const Tensor<double> y = random_tensor({1, 1, side, side}, prng, 0.0, 1.0);
  const SsimConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ssim_map_2d(x, y, cfg));
  }
}
BENCHMARK(bm_ssim_map_eval)->Arg(32)->Arg(64)->Arg(128);

void bm_ssim_loss_gradient(benchmark::State& state) {
  const auto batch = static_cast<int64_t>(state.range(0));
  rng::Prng prng(6);
  const Tensor<float> xv = random_batch({batch, 1, 32, 32}, 7);
  const Tensor<float> yv = random_batch({batch, 1, 32, 32}, 8);
  const SsimConfig cfg;
  for (auto _ : state) {
    Tape<float> tape;
    const auto x = tape.leaf(xv);
    const auto y = tape.constant(yv);
    const auto loss = ssim_loss(tape, x, y, cfg, 1000.0f);
    benchmark::DoNotOptimize(tape.backward(loss));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_ssim_loss_gradient)->Arg(20)->Arg(100);

// Full optimizer step: forward, objective, backward, parameter update.
void bm_train_step(benchmark::State& state) {
  const auto batch = static_cast<int64_t>(state.range(0));
  const VaeArchitecture arch = VaeArchitecture::standard();
  VaeParams<float> params = init_params<float>(arch, 9);
  AdamState adam = AdamState::init(params);
  const Tensor<float> patches = random_batch({batch, 1, 32, 32}, 10);
  LossConfig loss_cfg;
  rng::Prng eps(11);
  for (auto _ : state) {
    Tape<float> tape;
    const VaeNodeIds<float> ids = register_params(tape, params, true);
    const auto input = tape.constant(patches);
    const LatentNodes<float> latent = encode_on_tape(tape, arch, ids, input);
    const auto z = reparameterize_on_tape(tape, arch, latent, eps, false);
    const auto recon = decode_on_tape(tape, arch, ids, z);
    const auto [loss, parts] =
        total_loss(tape, input, recon, latent.mu, latent.logvar, loss_cfg);
    auto grads = tape.backward(loss);
    std::vector<Tensor<float>> flat;
    for (const auto& layer : ids.layers) {
      flat.push_back(grads.at(layer.weight));
      flat.push_back(grads.at(layer.bias));
    }
    adam_step(params, flat, adam, 0.01);
    benchmark::DoNotOptimize(parts.total);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_train_step)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

void bm_reconstruct_volume(benchmark::State& state) {
  const auto side = static_cast<int64_t>(state.range(0));
  PhantomSpec spec;
  spec.dims = {side, side, side};
  spec.seed = 12;
  const Volume vol = generate_phantom(spec).volume;
  const VaeArchitecture arch = VaeArchitecture::standard();
  const VaeParams<float> params = init_params<float>(arch, 13);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reconstruct_volume(arch, params, vol));
  }
  state.SetItemsProcessed(state.iterations() * side);
}
BENCHMARK(bm_reconstruct_volume)->Arg(48)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
