#include "tofvae/tensor.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cstring>

namespace tofvae {

std::string Shape4::str() const {
  return fmt::format("[{}x{}x{}x{}]", n, c, h, w);
}

std::string ConvSpec::str() const {
  return fmt::format("k{}x{} s{}x{} p{}x{} ({}->{}ch)", kh, kw, sh, sw, ph, pw,
                     in_channels, out_channels);
}

void check_same_shape(const Shape4& a, const Shape4& b, const char* op) {
  if (!(a == b))
    throw Error::data(fmt::format("{}: operand shapes {} and {} differ", op,
                                  a.str(), b.str()));
}

static void check_bias(const Shape4& b, int64_t out_c, const char* op) {
  if (b.numel() == 0) return;
  if (!(b.n == 1 && b.c == out_c && b.h == 1 && b.w == 1))
    throw Error::data(fmt::format("{}: bias shape {} does not match {} output channels",
                                  op, b.str(), out_c));
}

void check_conv_shapes(const Shape4& x, const Shape4& w, const Shape4& b,
                       const ConvSpec& spec) {
  if (w.n != spec.out_channels || w.c != spec.in_channels || w.h != spec.kh ||
      w.w != spec.kw)
    throw Error::data(fmt::format(
        "conv2d: weight shape {} does not match spec {} (expected [{}x{}x{}x{}])",
        w.str(), spec.str(), spec.out_channels, spec.in_channels, spec.kh, spec.kw));
  if (x.c != spec.in_channels)
    throw Error::data(fmt::format("conv2d: input has {} channels, spec expects {}",
                                  x.c, spec.in_channels));
  if (spec.kh < 1 || spec.kw < 1 || spec.sh < 1 || spec.sw < 1 || spec.ph < 0 ||
      spec.pw < 0)
    throw Error::data(fmt::format("conv2d: invalid spec {}", spec.str()));
  if (spec.out_h(x.h) < 1 || spec.out_w(x.w) < 1)
    throw Error::data(fmt::format(
        "conv2d: spec {} yields empty output for input spatial size {}x{}",
        spec.str(), x.h, x.w));
  check_bias(b, spec.out_channels, "conv2d");
}

void check_conv_transpose_shapes(const Shape4& x, const Shape4& w, const Shape4& b,
                                 const ConvSpec& spec) {
  if (w.n != spec.in_channels || w.c != spec.out_channels || w.h != spec.kh ||
      w.w != spec.kw)
    throw Error::data(fmt::format(
        "conv_transpose2d: weight shape {} does not match spec {} (expected [{}x{}x{}x{}])",
        w.str(), spec.str(), spec.in_channels, spec.out_channels, spec.kh, spec.kw));
  if (x.c != spec.in_channels)
    throw Error::data(fmt::format(
        "conv_transpose2d: input has {} channels, spec expects {}", x.c,
        spec.in_channels));
  if (spec.tr_out_h(x.h) < 1 || spec.tr_out_w(x.w) < 1)
    throw Error::data(fmt::format(
        "conv_transpose2d: spec {} yields empty output for input spatial size {}x{}",
        spec.str(), x.h, x.w));
  check_bias(b, spec.out_channels, "conv_transpose2d");
}

namespace kernels {

template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C) {
  constexpr int64_t JB = 64;
  for (int64_t i = 0; i < M; ++i) {
    const T* a_row = A + i * K;
    T* c_row = C + i * N;
    for (int64_t jb = 0; jb < N; jb += JB) {
      const int64_t jn = std::min(JB, N - jb);
      T acc[JB];
      for (int64_t j = 0; j < jn; ++j) acc[j] = c_row[jb + j];
      for (int64_t k = 0; k < K; ++k) {
        const T a = a_row[k];
        const T* b_row = B + k * N + jb;
        for (int64_t j = 0; j < jn; ++j) acc[j] += a * b_row[j];
      }
      for (int64_t j = 0; j < jn; ++j) c_row[jb + j] = acc[j];
    }
  }
}

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* in, T* out) {
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

template <typename T>
void im2col(const T* img, int64_t c, int64_t h, int64_t w, const ConvSpec& spec,
            T* col) {
  const int64_t oh = spec.out_h(h), ow = spec.out_w(w);
  const int64_t span = oh * ow;
  for (int64_t ci = 0; ci < c; ++ci) {
    const T* plane = img + ci * h * w;
    for (int64_t ki = 0; ki < spec.kh; ++ki) {
      for (int64_t kj = 0; kj < spec.kw; ++kj) {
        T* row = col + ((ci * spec.kh + ki) * spec.kw + kj) * span;
        for (int64_t oi = 0; oi < oh; ++oi) {
          const int64_t ii = oi * spec.sh - spec.ph + ki;
          T* dst = row + oi * ow;
          if (ii < 0 || ii >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + ii * w;
          for (int64_t oj = 0; oj < ow; ++oj) {
            const int64_t jj = oj * spec.sw - spec.pw + kj;
            dst[oj] = (jj >= 0 && jj < w) ? src[jj] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int64_t c, int64_t h, int64_t w, const ConvSpec& spec,
            T* img) {
  const int64_t oh = spec.out_h(h), ow = spec.out_w(w);
  const int64_t span = oh * ow;
  for (int64_t ci = 0; ci < c; ++ci) {
    T* plane = img + ci * h * w;
    for (int64_t ki = 0; ki < spec.kh; ++ki) {
      for (int64_t kj = 0; kj < spec.kw; ++kj) {
        const T* row = col + ((ci * spec.kh + ki) * spec.kw + kj) * span;
        for (int64_t oi = 0; oi < oh; ++oi) {
          const int64_t ii = oi * spec.sh - spec.ph + ki;
          if (ii < 0 || ii >= h) continue;
          T* dst = plane + ii * w;
          const T* src = row + oi * ow;
          for (int64_t oj = 0; oj < ow; ++oj) {
            const int64_t jj = oj * spec.sw - spec.pw + kj;
            if (jj >= 0 && jj < w) dst[jj] += src[oj];
          }
        }
      }
    }
  }
}

// A default-constructed tensor reports shape [1x1x1x1] while holding no
// data; map emptiness to a zero shape so check_bias can skip it.
template <typename T>
static Shape4 bias_check_shape(const Tensor<T>& bias) {
  return bias.empty() ? Shape4{1, 0, 1, 1} : bias.shape();
}

template <typename T>
static void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
  if (bias.numel() == 0) return;
  const int64_t span = y.shape().h * y.shape().w;
  for (int64_t n = 0; n < y.shape().n; ++n)
    for (int64_t c = 0; c < y.shape().c; ++c) {
      T* p = y.data() + (n * y.shape().c + c) * span;
      const T b = bias.data()[c];
      for (int64_t s = 0; s < span; ++s) p[s] += b;
    }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>& bias, const ConvSpec& spec) {
  check_conv_shapes(x.shape(), weight.shape(), bias_check_shape(bias), spec);
  const Shape4 xs = x.shape();
  const int64_t oh = spec.out_h(xs.h), ow = spec.out_w(xs.w);
  const int64_t K = spec.in_channels * spec.kh * spec.kw;
  const int64_t S = oh * ow;
  Tensor<T> y({xs.n, spec.out_channels, oh, ow});
  std::vector<T> col(K * S);
  for (int64_t n = 0; n < xs.n; ++n) {
    im2col(x.data() + n * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, spec, col.data());
    gemm_nn(spec.out_channels, S, K, weight.data(), col.data(),
            y.data() + n * spec.out_channels * S);
  }
  add_bias(y, bias);
  return y;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Shape4& x_shape, const Tensor<T>& weight,
                                const Tensor<T>& grad_out, const ConvSpec& spec) {
  const int64_t oh = spec.out_h(x_shape.h), ow = spec.out_w(x_shape.w);
  const int64_t K = spec.in_channels * spec.kh * spec.kw;
  const int64_t S = oh * ow;
  Tensor<T> dx(x_shape);
  std::vector<T> wt(K * spec.out_channels);
  transpose(spec.out_channels, K, weight.data(), wt.data());
  std::vector<T> dcol(K * S);
  for (int64_t n = 0; n < x_shape.n; ++n) {
    std::fill(dcol.begin(), dcol.end(), T(0));
    gemm_nn(K, S, spec.out_channels, wt.data(),
            grad_out.data() + n * spec.out_channels * S, dcol.data());
    col2im(dcol.data(), x_shape.c, x_shape.h, x_shape.w, spec,
           dx.data() + n * x_shape.c * x_shape.h * x_shape.w);
  }
  return dx;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& x, const Shape4& w_shape,
                                 const Tensor<T>& grad_out, const ConvSpec& spec) {
  const Shape4 xs = x.shape();
  const int64_t oh = spec.out_h(xs.h), ow = spec.out_w(xs.w);
  const int64_t K = spec.in_channels * spec.kh * spec.kw;
  const int64_t S = oh * ow;
  Tensor<T> dw(w_shape);
  std::vector<T> col(K * S), colT(S * K);
  for (int64_t n = 0; n < xs.n; ++n) {
    im2col(x.data() + n * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, spec, col.data());
    transpose(K, S, col.data(), colT.data());
    gemm_nn(spec.out_channels, K, S, grad_out.data() + n * spec.out_channels * S,
            colT.data(), dw.data());
  }
  return dw;
}

template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight,
                                   const Tensor<T>& bias, const ConvSpec& spec) {
  check_conv_transpose_shapes(x.shape(), weight.shape(), bias_check_shape(bias),
                              spec);
  const Shape4 xs = x.shape();
  const int64_t H = spec.tr_out_h(xs.h), W = spec.tr_out_w(xs.w);
  const int64_t K = spec.out_channels * spec.kh * spec.kw;
  const int64_t S = xs.h * xs.w;  // output grid of the adjoint convolution
  Tensor<T> y({xs.n, spec.out_channels, H, W});
  std::vector<T> wt(K * spec.in_channels);
  transpose(spec.in_channels, K, weight.data(), wt.data());
  std::vector<T> col(K * S);
  for (int64_t n = 0; n < xs.n; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    gemm_nn(K, S, spec.in_channels, wt.data(), x.data() + n * xs.c * S, col.data());
    col2im(col.data(), spec.out_channels, H, W, spec,
           y.data() + n * spec.out_channels * H * W);
  }
  add_bias(y, bias);
  return y;
}

template <typename T>
Tensor<T> conv_transpose2d_backward_input(const Shape4& x_shape,
                                          const Tensor<T>& weight,
                                          const Tensor<T>& grad_out,
                                          const ConvSpec& spec) {
  const int64_t H = spec.tr_out_h(x_shape.h), W = spec.tr_out_w(x_shape.w);
  const int64_t K = spec.out_channels * spec.kh * spec.kw;
  const int64_t S = x_shape.h * x_shape.w;
  Tensor<T> dx(x_shape);
  std::vector<T> dcol(K * S);
  for (int64_t n = 0; n < x_shape.n; ++n) {
    im2col(grad_out.data() + n * spec.out_channels * H * W, spec.out_channels, H, W,
           spec, dcol.data());
    gemm_nn(spec.in_channels, S, K, weight.data(), dcol.data(),
            dx.data() + n * x_shape.c * S);
  }
  return dx;
}

template <typename T>
Tensor<T> conv_transpose2d_backward_weight(const Tensor<T>& x,
                                           const Shape4& w_shape,
                                           const Tensor<T>& grad_out,
                                           const ConvSpec& spec) {
  const Shape4 xs = x.shape();
  const int64_t H = spec.tr_out_h(xs.h), W = spec.tr_out_w(xs.w);
  const int64_t K = spec.out_channels * spec.kh * spec.kw;
  const int64_t S = xs.h * xs.w;
  Tensor<T> dw(w_shape);
  std::vector<T> dcol(K * S), dcolT(S * K);
  for (int64_t n = 0; n < xs.n; ++n) {
    im2col(grad_out.data() + n * spec.out_channels * H * W, spec.out_channels, H, W,
           spec, dcol.data());
    transpose(K, S, dcol.data(), dcolT.data());
    gemm_nn(spec.in_channels, K, S, x.data() + n * xs.c * S, dcolT.data(), dw.data());
  }
  return dw;
}

template <typename T>
Tensor<T> bias_grad(const Tensor<T>& grad_out) {
  const Shape4 gs = grad_out.shape();
  Tensor<T> db({1, gs.c, 1, 1});
  const int64_t span = gs.h * gs.w;
  for (int64_t n = 0; n < gs.n; ++n)
    for (int64_t c = 0; c < gs.c; ++c) {
      const T* p = grad_out.data() + (n * gs.c + c) * span;
      T acc = 0;
      for (int64_t s = 0; s < span; ++s) acc += p[s];
      db.data()[c] += acc;
    }
  return db;
}

template <typename T>
Tensor<T> window_corr_valid(const Tensor<T>& x, const Tensor<T>& window) {
  const Shape4 xs = x.shape();
  const int64_t kh = window.shape().h, kw = window.shape().w;
  if (kh > xs.h || kw > xs.w)
    throw Error::data(fmt::format(
        "window_corr_valid: window {}x{} larger than input spatial size {}x{}", kh,
        kw, xs.h, xs.w));
  const int64_t oh = xs.h - kh + 1, ow = xs.w - kw + 1;
  Tensor<T> y({xs.n, xs.c, oh, ow});
  const T* win = window.data();
  for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* plane = x.data() + nc * xs.h * xs.w;
    T* out = y.data() + nc * oh * ow;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t a = 0; a < kh; ++a) {
        const T* src = plane + (i + a) * xs.w;
        const T* wrow = win + a * kw;
        T* dst = out + i * ow;
        for (int64_t b = 0; b < kw; ++b) {
          const T wv = wrow[b];
          for (int64_t j = 0; j < ow; ++j) dst[j] += wv * src[j + b];
        }
      }
  }
  return y;
}

template <typename T>
Tensor<T> window_corr_valid_adjoint(const Shape4& x_shape, const Tensor<T>& window,
                                    const Tensor<T>& grad_out) {
  const int64_t kh = window.shape().h, kw = window.shape().w;
  const int64_t oh = x_shape.h - kh + 1, ow = x_shape.w - kw + 1;
  Tensor<T> dx(x_shape);
  const T* win = window.data();
  for (int64_t nc = 0; nc < x_shape.n * x_shape.c; ++nc) {
    const T* g = grad_out.data() + nc * oh * ow;
    T* plane = dx.data() + nc * x_shape.h * x_shape.w;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t a = 0; a < kh; ++a) {
        T* dst = plane + (i + a) * x_shape.w;
        const T* wrow = win + a * kw;
        const T* src = g + i * ow;
        for (int64_t b = 0; b < kw; ++b) {
          const T wv = wrow[b];
          for (int64_t j = 0; j < ow; ++j) dst[j + b] += wv * src[j];
        }
      }
  }
  return dx;
}

#define TOFVAE_INSTANTIATE_KERNELS(T)                                              \
  template void gemm_nn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);     \
  template void transpose<T>(int64_t, int64_t, const T*, T*);                      \
  template void im2col<T>(const T*, int64_t, int64_t, int64_t, const ConvSpec&,    \
                          T*);                                                     \
  template void col2im<T>(const T*, int64_t, int64_t, int64_t, const ConvSpec&,    \
                          T*);                                                     \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&,         \
                                       const Tensor<T>&, const ConvSpec&);         \
  template Tensor<T> conv2d_backward_input<T>(const Shape4&, const Tensor<T>&,     \
                                              const Tensor<T>&, const ConvSpec&);  \
  template Tensor<T> conv2d_backward_weight<T>(const Tensor<T>&, const Shape4&,    \
                                               const Tensor<T>&, const ConvSpec&); \
  template Tensor<T> conv_transpose2d_forward<T>(const Tensor<T>&,                 \
                                                 const Tensor<T>&,                 \
                                                 const Tensor<T>&,                 \
                                                 const ConvSpec&);                 \
  template Tensor<T> conv_transpose2d_backward_input<T>(                           \
      const Shape4&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);         \
  template Tensor<T> conv_transpose2d_backward_weight<T>(                          \
      const Tensor<T>&, const Shape4&, const Tensor<T>&, const ConvSpec&);         \
  template Tensor<T> bias_grad<T>(const Tensor<T>&);                               \
  template Tensor<T> window_corr_valid<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> window_corr_valid_adjoint<T>(const Shape4&, const Tensor<T>&, \
                                                  const Tensor<T>&);

TOFVAE_INSTANTIATE_KERNELS(float)
TOFVAE_INSTANTIATE_KERNELS(double)
TOFVAE_INSTANTIATE_KERNELS(long double)

#undef TOFVAE_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace tofvae
