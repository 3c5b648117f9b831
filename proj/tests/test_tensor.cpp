#include <doctest.h>

#include <cmath>

#include "tofvae/errors.hpp"
#include "tofvae/gradcheck.hpp"
#include "tofvae/rng.hpp"
#include "tofvae/tensor.hpp"

using namespace tofvae;

namespace {

// Dense reference convolution: direct loops, no im2col, no blocking.
Tensor<double> conv_ref(const Tensor<double>& x, const Tensor<double>& w,
                        const Tensor<double>& b, const ConvSpec& s) {
  const auto& xs = x.shape();
  Tensor<double> out({xs.n, s.out_channels, s.out_h(xs.h), s.out_w(xs.w)});
  for (int64_t n = 0; n < out.shape().n; ++n)
    for (int64_t oc = 0; oc < out.shape().c; ++oc)
      for (int64_t oh = 0; oh < out.shape().h; ++oh)
        for (int64_t ow = 0; ow < out.shape().w; ++ow) {
          double acc = b.numel() ? b.at(0, oc, 0, 0) : 0.0;
          for (int64_t ic = 0; ic < s.in_channels; ++ic)
            for (int64_t kh = 0; kh < s.kh; ++kh)
              for (int64_t kw = 0; kw < s.kw; ++kw) {
                const int64_t ih = oh * s.sh - s.ph + kh;
                const int64_t iw = ow * s.sw - s.pw + kw;
                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                acc += x.at(n, ic, ih, iw) * w.at(oc, ic, kh, kw);
              }
          out.at(n, oc, oh, ow) = acc;
        }
  return out;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("shape indexing is row-major with w fastest") {
  Tensor<float> t({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.index(0, 0, 0, 1) == 1);
  CHECK(t.index(0, 0, 1, 0) == 5);
  CHECK(t.index(0, 1, 0, 0) == 20);
  CHECK(t.index(1, 0, 0, 0) == 60);
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t.data()[119] == 7.0f);
}

TEST_CASE("from rejects mismatched data length") {
  CHECK_THROWS_AS(Tensor<float>::from({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f}), Error);
  CHECK_THROWS_AS(Tensor<float>({0, 1, 1, 1}), Error);
}

TEST_CASE("item only works on scalars") {
  CHECK(Tensor<double>::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(Tensor<double>({1, 1, 1, 2}).item(), Error);
}

TEST_CASE("all_finite detects nan and inf") {
  Tensor<float> t({1, 1, 1, 3}, 1.0f);
  CHECK(t.all_finite());
  t.data()[1] = std::nanf("");
  CHECK_FALSE(t.all_finite());
  t.data()[1] = 1.0f;
  t.data()[2] = HUGE_VALF;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("conv output shape arithmetic") {
  ConvSpec s{4, 4, 2, 2, 1, 1, 1, 8};
  CHECK(s.out_h(32) == 16);
  CHECK(s.out_w(32) == 16);
  CHECK(s.tr_out_h(16) == 32);
  CHECK(s.tr_out_w(16) == 32);
  ConvSpec k3{3, 3, 2, 2, 1, 1, 2, 3};
  CHECK(k3.out_h(5) == 3);
}

TEST_CASE("conv2d matches a direct dense reference") {
  rng::Prng r(11);
  for (const ConvSpec s : {ConvSpec{3, 3, 1, 1, 1, 1, 2, 4},
                           ConvSpec{4, 4, 2, 2, 1, 1, 3, 2},
                           ConvSpec{1, 1, 1, 1, 0, 0, 3, 5},
                           ConvSpec{3, 3, 2, 2, 1, 1, 2, 3}}) {
    Tensor<double> x = random_tensor({2, s.in_channels, 9, 9}, r);
    Tensor<double> w =
        random_tensor({s.out_channels, s.in_channels, s.kh, s.kw}, r);
    Tensor<double> b = random_tensor({1, s.out_channels, 1, 1}, r);
    const Tensor<double> got = kernels::conv2d_forward(x, w, b, s);
    const Tensor<double> want = conv_ref(x, w, b, s);
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv_transpose2d inverts the stride-2 spatial reduction") {
  ConvSpec s{4, 4, 2, 2, 1, 1, 8, 3};
  rng::Prng r(5);
  Tensor<double> x = random_tensor({1, 8, 16, 16}, r);
  Tensor<double> w = random_tensor({8, 3, 4, 4}, r);
  Tensor<double> b({1, 3, 1, 1});
  const Tensor<double> y = kernels::conv_transpose2d_forward(x, w, b, s);
  CHECK(y.shape() == Shape4{1, 3, 32, 32});
}

TEST_CASE("conv adjoint identity <conv(x), y> == <x, conv_t(y)>") {
  // conv2d and conv_transpose2d with the same spec and shared weight are
  // adjoint maps; the identity holds for every spec used by the model.
  rng::Prng r(7);
  for (const ConvSpec s : {ConvSpec{4, 4, 2, 2, 1, 1, 4, 6},
                           ConvSpec{3, 3, 1, 1, 1, 1, 2, 2},
                           ConvSpec{3, 3, 2, 2, 1, 1, 3, 4}}) {
    Tensor<double> x = random_tensor({2, s.in_channels, 8, 8}, r);
    Tensor<double> w =
        random_tensor({s.out_channels, s.in_channels, s.kh, s.kw}, r);
    const Tensor<double> empty_bias;
    const Tensor<double> cx = kernels::conv2d_forward(x, w, empty_bias, s);
    Tensor<double> y = random_tensor(cx.shape(), r);
    // adjoint of x -> conv(x, w) is grad_out -> conv2d_backward_input
    const Tensor<double> aty = kernels::conv2d_backward_input(x.shape(), w, y, s);
    const double lhs = dot(cx, y);
    const double rhs = dot(x, aty);
    CHECK(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1.0}) <
          1e-6);
  }
}

TEST_CASE("window_corr_valid equals direct windowed sums") {
  rng::Prng r(3);
  Tensor<double> x = random_tensor({1, 2, 7, 6}, r);
  Tensor<double> win({1, 1, 3, 3});
  for (int64_t i = 0; i < 9; ++i) win.data()[i] = 1.0 / 9.0;
  const Tensor<double> got = kernels::window_corr_valid(x, win);
  REQUIRE(got.shape() == Shape4{1, 2, 5, 4});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t oh = 0; oh < 5; ++oh)
      for (int64_t ow = 0; ow < 4; ++ow) {
        double acc = 0;
        for (int64_t kh = 0; kh < 3; ++kh)
          for (int64_t kw = 0; kw < 3; ++kw)
            acc += x.at(0, c, oh + kh, ow + kw) / 9.0;
        CHECK(got.at(0, c, oh, ow) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv shape checks throw data errors") {
  ConvSpec s{3, 3, 1, 1, 1, 1, 2, 4};
  Tensor<float> x({1, 3, 8, 8});  // 3 channels, spec wants 2
  Tensor<float> w({4, 2, 3, 3});
  Tensor<float> b({1, 4, 1, 1});
  CHECK_THROWS_AS(kernels::conv2d_forward(x, w, b, s), Error);
}

}  // TEST_SUITE
