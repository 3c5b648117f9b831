#include <doctest.h>

#include <cmath>

#include "tofvae/errors.hpp"
#include "tofvae/gradcheck.hpp"
#include "tofvae/losses.hpp"
#include "tofvae/rng.hpp"

using namespace tofvae;

namespace {

Tensor<double> constant_image(Shape4 s, double v) { return Tensor<double>(s, v); }

double tape_scalar(Tape<double>& t, Tape<double>::Id id) { return t.value(id).item(); }

double mean_of(const Tensor<double>& t) {
  double acc = 0;
  for (int64_t i = 0; i < t.numel(); ++i) acc += t.data()[i];
  return acc / static_cast<double>(t.numel());
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("l2 is the per-sample squared-error sum averaged over the batch") {
  Tape<double> t;
  auto x = t.constant(Tensor<double>::from({1, 1, 1, 2}, {0.0, 0.0}));
  auto y = t.constant(Tensor<double>::from({1, 1, 1, 2}, {3.0, 4.0}));
  CHECK(tape_scalar(t, l2_loss(t, x, y)) == doctest::Approx(25.0).epsilon(1e-12));

  // two identical samples keep the per-sample value under batch averaging
  auto x2 = t.constant(Tensor<double>::from({2, 1, 1, 2}, {0, 0, 0, 0}));
  auto y2 = t.constant(Tensor<double>::from({2, 1, 1, 2}, {3, 4, 3, 4}));
  CHECK(tape_scalar(t, l2_loss(t, x2, y2)) == doctest::Approx(25.0).epsilon(1e-12));

  CHECK(tape_scalar(t, l2_loss(t, x, x)) == 0.0);
}

TEST_CASE("l2 gradient is 2(x - y)/N") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::from({2, 1, 1, 2}, {1.0, 2.0, 3.0, 4.0}), true);
  auto y = t.constant(Tensor<double>::from({2, 1, 1, 2}, {0.5, 2.5, 2.0, 6.0}));
  auto grads = t.backward(l2_loss(t, x, y));
  const auto& g = grads.at(x);
  CHECK(g.data()[0] == doctest::Approx(2.0 * 0.5 / 2.0));
  CHECK(g.data()[1] == doctest::Approx(2.0 * -0.5 / 2.0));
  CHECK(g.data()[2] == doctest::Approx(2.0 * 1.0 / 2.0));
  CHECK(g.data()[3] == doctest::Approx(2.0 * -2.0 / 2.0));
}

TEST_CASE("gaussian window is normalized and symmetric") {
  SsimConfig cfg;
  const Tensor<double> w = cfg.window<double>();
  REQUIRE(w.shape() == Shape4{1, 1, 11, 11});
  double sum = 0;
  for (int64_t i = 0; i < w.numel(); ++i) {
    CHECK(w.data()[i] > 0.0);
    sum += w.data()[i];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (int64_t r = 0; r < 11; ++r)
    for (int64_t c = 0; c < 11; ++c) {
      CHECK(w.at(0, 0, r, c) == doctest::Approx(w.at(0, 0, 10 - r, 10 - c)));
      CHECK(w.at(0, 0, r, c) == doctest::Approx(w.at(0, 0, c, r)));
    }
  // center tap is the largest
  for (int64_t i = 0; i < w.numel(); ++i)
    CHECK(w.data()[i] <= w.at(0, 0, 5, 5));
}

TEST_CASE("identical images score one everywhere") {
  rng::Prng r(17);
  Tape<double> t;
  auto x = t.constant(random_tensor({1, 1, 16, 16}, r, 0.0, 1.0));
  const auto& map = t.value(ssim_map(t, x, x, SsimConfig{}));
  REQUIRE(map.shape() == Shape4{1, 1, 6, 6});
  for (int64_t i = 0; i < map.numel(); ++i)
    CHECK(map.data()[i] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("constant images match the closed form") {
  // zero variances leave the luminance quotient (2ab + C1)/(a^2 + b^2 + C1)
  SsimConfig cfg;
  const double a = 0.5, b = 0.3;
  const double oracle = (2 * a * b + cfg.c1()) / (a * a + b * b + cfg.c1());
  CHECK(oracle == doctest::Approx(0.8823875).epsilon(1e-6));

  Tape<double> t;
  auto xa = t.constant(constant_image({1, 1, 16, 16}, a));
  auto xb = t.constant(constant_image({1, 1, 16, 16}, b));
  const auto& map = t.value(ssim_map(t, xa, xb, cfg));
  for (int64_t i = 0; i < map.numel(); ++i)
    CHECK(map.data()[i] == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("similarity is symmetric and bounded") {
  rng::Prng r(23);
  for (int rep = 0; rep < 3; ++rep) {
    const Tensor<double> xv = random_tensor({1, 1, 15, 14}, r, 0.0, 1.0);
    const Tensor<double> yv = random_tensor({1, 1, 15, 14}, r, 0.0, 1.0);
    Tape<double> t;
    // copies: growing the tape for the second map invalidates references
    const Tensor<double> fwd =
        t.value(ssim_map(t, t.constant(xv), t.constant(yv), {}));
    const Tensor<double> rev =
        t.value(ssim_map(t, t.constant(yv), t.constant(xv), {}));
    for (int64_t i = 0; i < fwd.numel(); ++i) {
      CHECK(std::abs(fwd.data()[i] - rev.data()[i]) <= 1e-7);
      CHECK(fwd.data()[i] >= -1.0);
      CHECK(fwd.data()[i] <= 1.0);
    }
  }
}

TEST_CASE("tape map agrees with the evaluation-path map") {
  rng::Prng r(31);
  const Tensor<double> xv = random_tensor({1, 1, 20, 18}, r, 0.0, 1.0);
  const Tensor<double> yv = random_tensor({1, 1, 20, 18}, r, 0.0, 1.0);
  Tape<double> t;
  const auto& on_tape = t.value(ssim_map(t, t.constant(xv), t.constant(yv), {}));
  const Tensor<double> plain = ssim_map_2d(xv, yv, SsimConfig{});
  REQUIRE(on_tape.shape() == plain.shape());
  for (int64_t i = 0; i < plain.numel(); ++i)
    CHECK(std::abs(on_tape.data()[i] - plain.data()[i]) <= 1e-9);
}

TEST_CASE("mean similarity strictly decreases with noise amplitude") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    rng::Prng r(seed);
    const Tensor<double> x = random_tensor({1, 1, 24, 24}, r, 0.2, 0.8);
    Tensor<double> e({1, 1, 24, 24});
    for (int64_t i = 0; i < e.numel(); ++i) e.data()[i] = r.normal();
    double prev = 1.0;
    for (const double sigma : {0.01, 0.05, 0.1}) {
      Tensor<double> y = x;
      for (int64_t i = 0; i < y.numel(); ++i) y.data()[i] += sigma * e.data()[i];
      const double m = mean_of(ssim_map_2d(x, y, SsimConfig{}));
      CAPTURE(seed);
      CAPTURE(sigma);
      CHECK(m < prev);
      prev = m;
    }
  }
}

TEST_CASE("ssim_loss is weight times one minus the mean map") {
  rng::Prng r(41);
  const Tensor<double> xv = random_tensor({2, 1, 16, 16}, r, 0.1, 0.9);
  const Tensor<double> yv = random_tensor({2, 1, 16, 16}, r, 0.1, 0.9);
  Tape<double> t;
  auto x = t.constant(xv);
  auto y = t.constant(yv);
  const double loss = tape_scalar(t, ssim_loss(t, x, y, {}, 1000.0));
  const double mean_map = tape_scalar(t, t.reduce_mean(ssim_map(t, x, y, {})));
  CHECK(loss == doctest::Approx(1000.0 * (1.0 - mean_map)).epsilon(1e-9));
  CHECK(tape_scalar(t, ssim_loss(t, x, x, {}, 1000.0)) ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
}

TEST_CASE("ssim_map rejects inputs smaller than the window") {
  Tape<double> t;
  auto x = t.constant(Tensor<double>({1, 1, 10, 16}, 0.5));
  CHECK_THROWS_AS(ssim_map(t, x, x, SsimConfig{}), Error);
}

TEST_CASE("kl divergence closed-form identities") {
  Tape<double> t;
  auto zeros = t.constant(Tensor<double>({2, 3, 2, 2}, 0.0));
  CHECK(tape_scalar(t, kl_loss(t, zeros, zeros)) == 0.0);

  auto mu1 = t.constant(Tensor<double>::scalar(1.0));
  auto lv0 = t.constant(Tensor<double>::scalar(0.0));
  CHECK(tape_scalar(t, kl_loss(t, mu1, lv0)) ==
        doctest::Approx(0.5).epsilon(1e-9));

  const double ln4 = std::log(4.0);
  auto mu0 = t.constant(Tensor<double>::scalar(0.0));
  auto lvln4 = t.constant(Tensor<double>::scalar(ln4));
  CHECK(tape_scalar(t, kl_loss(t, mu0, lvln4)) ==
        doctest::Approx(0.5 * (4.0 - 1.0 - ln4)).epsilon(1e-12));
  CHECK(0.5 * (4.0 - 1.0 - ln4) == doctest::Approx(0.80685).epsilon(1e-4));
}

TEST_CASE("kl is nonnegative and batch-averaged") {
  rng::Prng r(55);
  Tape<double> t;
  for (int rep = 0; rep < 5; ++rep) {
    auto mu = t.constant(random_tensor({3, 4, 2, 2}, r, -2.0, 2.0));
    auto lv = t.constant(random_tensor({3, 4, 2, 2}, r, -3.0, 3.0));
    CHECK(tape_scalar(t, kl_loss(t, mu, lv)) >= 0.0);
  }
  // two identical samples give the single-sample divergence
  auto mu1 = t.constant(Tensor<double>::from({2, 1, 1, 1}, {1.0, 1.0}));
  auto lv1 = t.constant(Tensor<double>::from({2, 1, 1, 1}, {0.0, 0.0}));
  CHECK(tape_scalar(t, kl_loss(t, mu1, lv1)) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("total loss components sum to the total in both modes") {
  rng::Prng r(61);
  const Tensor<double> target = random_tensor({2, 1, 16, 16}, r, 0.1, 0.9);
  const Tensor<double> recon = random_tensor({2, 1, 16, 16}, r, 0.1, 0.9);
  const Tensor<double> mu = random_tensor({2, 32, 2, 2}, r, -1.0, 1.0);
  const Tensor<double> lv = random_tensor({2, 32, 2, 2}, r, -1.0, 1.0);

  LossBreakdown by_mode[2];
  for (const LossMode mode : {LossMode::L2, LossMode::Ssim}) {
    Tape<double> t;
    LossConfig cfg;
    cfg.mode = mode;
    auto [id, parts] = total_loss(t, t.constant(target), t.constant(recon),
                                  t.constant(mu), t.constant(lv), cfg);
    CHECK(std::abs(parts.total - (parts.recon + parts.kl)) <= 1e-9);
    CHECK(tape_scalar(t, id) == doctest::Approx(parts.total).epsilon(1e-12));
    by_mode[mode == LossMode::Ssim] = parts;
  }
  // switching mode changes only the reconstruction term
  CHECK(by_mode[0].kl == doctest::Approx(by_mode[1].kl).epsilon(1e-12));
  CHECK(by_mode[0].recon != by_mode[1].recon);
}

TEST_CASE("perfect reconstruction with a standard-normal latent is zero") {
  rng::Prng r(71);
  const Tensor<double> x = random_tensor({1, 1, 16, 16}, r, 0.1, 0.9);
  const Tensor<double> zeros({1, 32, 2, 2}, 0.0);
  for (const LossMode mode : {LossMode::L2, LossMode::Ssim}) {
    Tape<double> t;
    LossConfig cfg;
    cfg.mode = mode;
    auto [id, parts] = total_loss(t, t.constant(x), t.constant(x),
                                  t.constant(zeros), t.constant(zeros), cfg);
    CHECK(std::abs(tape_scalar(t, id)) <= 1e-9);
    CHECK(std::abs(parts.total) <= 1e-9);
  }
}

TEST_CASE("loss mode names round trip") {
  CHECK(parse_loss_mode("l2") == LossMode::L2);
  CHECK(parse_loss_mode("ssim") == LossMode::Ssim);
  CHECK(parse_loss_mode(loss_mode_name(LossMode::Ssim)) == LossMode::Ssim);
  CHECK_THROWS_AS(parse_loss_mode("huber"), Error);
}

}  // TEST_SUITE
