#include <doctest.h>

#include <cmath>

#include "tofvae/errors.hpp"
#include "tofvae/gradcheck.hpp"
#include "tofvae/rng.hpp"
#include "tofvae/tape.hpp"

using namespace tofvae;

TEST_SUITE("tape") {

TEST_CASE("forward values of elementwise ops") {
  Tape<double> t;
  auto a = t.constant(Tensor<double>::from({1, 1, 1, 4}, {1, -2, 3, 0}));
  auto b = t.constant(Tensor<double>::from({1, 1, 1, 4}, {2, 2, -1, 5}));
  CHECK(t.value(t.add(a, b)).vec() == std::vector<double>{3, 0, 2, 5});
  CHECK(t.value(t.sub(a, b)).vec() == std::vector<double>{-1, -4, 4, -5});
  CHECK(t.value(t.mul(a, b)).vec() == std::vector<double>{2, -4, -3, 0});
  CHECK(t.value(t.mul_scalar(a, -2)).vec() == std::vector<double>{-2, 4, -6, 0});
  CHECK(t.value(t.add_scalar(a, 1)).vec() == std::vector<double>{2, -1, 4, 1});
  CHECK(t.value(t.square(a)).vec() == std::vector<double>{1, 4, 9, 0});
  const auto clamped = t.value(t.clamp(a, -1, 2)).vec();
  CHECK(clamped == std::vector<double>{1, -1, 2, 0});
}

TEST_CASE("leaky_relu forward and the slope at exactly zero") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::from({1, 1, 1, 3}, {2.0, -3.0, 0.0}), true);
  auto y = t.leaky_relu(x, 0.01);
  const auto& v = t.value(y);
  CHECK(v.data()[0] == 2.0);
  CHECK(v.data()[1] == doctest::Approx(-0.03));
  CHECK(v.data()[2] == 0.0);
  auto grads = t.backward(t.reduce_sum(y));
  const auto& g = grads.at(x);
  CHECK(g.data()[0] == 1.0);
  CHECK(g.data()[1] == doctest::Approx(0.01));
  // the kink point itself takes the negative-branch slope
  CHECK(g.data()[2] == doctest::Approx(0.01));
}

TEST_CASE("sigmoid saturates finite and strictly below/at one") {
  Tape<double> t;
  auto x = t.constant(Tensor<double>::from({1, 1, 1, 3}, {0.0, 38.0, -38.0}));
  const auto& v = t.value(t.sigmoid(x));
  CHECK(v.data()[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(v.data()[1]));
  CHECK(v.data()[1] <= 1.0);
  CHECK(v.data()[2] >= 0.0);
  CHECK(v.data()[2] < 1e-10);
}

TEST_CASE("reduce_mean gradient is 1/count") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({1, 2, 3, 4}, 1.5), true);
  auto m = t.reduce_mean(x);
  CHECK(t.value(m).item() == doctest::Approx(1.5));
  auto grads = t.backward(m);
  for (int64_t i = 0; i < 24; ++i)
    CHECK(grads.at(x).data()[i] == doctest::Approx(1.0 / 24.0));
}

TEST_CASE("backward accumulates through fan-out") {
  // y = x*x + x  =>  dy/dx = 2x + 1
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::from({1, 1, 1, 2}, {3.0, -1.0}), true);
  auto y = t.reduce_sum(t.add(t.mul(x, x), x));
  auto grads = t.backward(y);
  CHECK(grads.at(x).data()[0] == doctest::Approx(7.0));
  CHECK(grads.at(x).data()[1] == doctest::Approx(-1.0));
}

TEST_CASE("constants are absent from the gradient map") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::scalar(2.0), true);
  auto c = t.constant(Tensor<double>::scalar(5.0));
  auto y = t.mul(x, c);
  auto grads = t.backward(y);
  CHECK(grads.count(x) == 1);
  CHECK(grads.count(c) == 0);
  CHECK(grads.at(x).item() == doctest::Approx(5.0));
}

TEST_CASE("requires_grad pruning skips untracked subgraphs") {
  Tape<double> t;
  auto a = t.leaf(Tensor<double>::scalar(1.0), false);
  auto b = t.leaf(Tensor<double>::scalar(2.0), false);
  auto c = t.mul(a, b);  // entirely constant subgraph
  CHECK_FALSE(t.requires_grad(c));
  auto x = t.leaf(Tensor<double>::scalar(3.0), true);
  auto y = t.add(c, x);
  CHECK(t.requires_grad(y));
  auto grads = t.backward(y);
  CHECK(grads.count(a) == 0);
  CHECK(grads.at(x).item() == doctest::Approx(1.0));
}

TEST_CASE("backward requires a scalar root") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({1, 1, 2, 2}, 1.0), true);
  CHECK_THROWS_AS(t.backward(x), Error);
}

TEST_CASE("div backward matches quotient rule") {
  Tape<double> t;
  auto a = t.leaf(Tensor<double>::scalar(3.0), true);
  auto b = t.leaf(Tensor<double>::scalar(4.0), true);
  auto y = t.div(a, b);
  auto grads = t.backward(y);
  CHECK(grads.at(a).item() == doctest::Approx(0.25));
  CHECK(grads.at(b).item() == doctest::Approx(-3.0 / 16.0));
}

TEST_CASE("exp backward is exp itself") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::scalar(1.25), true);
  auto grads = t.backward(t.exp(x));
  CHECK(grads.at(x).item() == doctest::Approx(std::exp(1.25)));
}

TEST_CASE("same-shape ops reject mismatched shapes") {
  Tape<double> t;
  auto a = t.constant(Tensor<double>({1, 1, 2, 2}));
  auto b = t.constant(Tensor<double>({1, 1, 2, 3}));
  CHECK_THROWS_AS(t.add(a, b), Error);
  CHECK_THROWS_AS(t.mul(a, b), Error);
}

TEST_CASE("determinism: same graph twice gives bit-identical gradients") {
  rng::Prng r(99);
  const Tensor<double> xv = random_tensor({2, 1, 6, 6}, r);
  auto run = [&] {
    Tape<double> t;
    auto x = t.leaf(xv, true);
    auto y = t.reduce_mean(t.square(t.sigmoid(t.mul_scalar(x, 1.7))));
    return t.backward(y).at(x);
  };
  const Tensor<double> g1 = run();
  const Tensor<double> g2 = run();
  CHECK(g1 == g2);
}

}  // TEST_SUITE
