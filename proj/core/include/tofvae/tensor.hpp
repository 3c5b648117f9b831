#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tofvae/errors.hpp"

namespace tofvae {

struct Shape4 {
  int64_t n = 1, c = 1, h = 1, w = 1;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense rank-4 array [N,C,H,W], row-major with W fastest. The unit of all
// differentiable computation; value semantics throughout.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape4 shape, T fill = T(0))
      : shape_(shape), data_(check_shape(shape), fill) {}

  static Tensor from(Shape4 shape, std::vector<T> data) {
    if (static_cast<int64_t>(data.size()) != shape.numel())
      throw Error::data("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape.str());
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::move(data);
    return t;
  }

  static Tensor scalar(T v) {
    Tensor t({1, 1, 1, 1});
    t.data_[0] = v;
    return t;
  }

  const Shape4& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[index(n, c, h, w)];
  }
  T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[index(n, c, h, w)];
  }
  int64_t index(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  // Value of a 1x1x1x1 tensor.
  T item() const {
    if (numel() != 1)
      throw Error::data("item() called on tensor of shape " + shape_.str());
    return data_[0];
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  static int64_t check_shape(const Shape4& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw Error::data("tensor dimensions must all be >= 1, got " + s.str());
    return s.numel();
  }

  Shape4 shape_;
  std::vector<T> data_;
};

// Geometry of one (transposed) convolution layer.
struct ConvSpec {
  int64_t kh = 3, kw = 3;
  int64_t sh = 1, sw = 1;
  int64_t ph = 0, pw = 0;
  int64_t in_channels = 1, out_channels = 1;

  int64_t out_h(int64_t h) const { return (h + 2 * ph - kh) / sh + 1; }
  int64_t out_w(int64_t w) const { return (w + 2 * pw - kw) / sw + 1; }
  // transposed-convolution output size
  int64_t tr_out_h(int64_t h) const { return (h - 1) * sh - 2 * ph + kh; }
  int64_t tr_out_w(int64_t w) const { return (w - 1) * sw - 2 * pw + kw; }

  bool operator==(const ConvSpec&) const = default;
  std::string str() const;
};

namespace kernels {

// C(M x N) += A(M x K) * B(K x N), all row-major.
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C);

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* in, T* out);

// Unfolds one image (c x h x w) into a (c*kh*kw) x (oh*ow) patch matrix,
// writing every entry (zero padding included).
template <typename T>
void im2col(const T* img, int64_t c, int64_t h, int64_t w, const ConvSpec& spec,
            T* col);

// Adjoint of im2col: accumulates a patch matrix back into an image. The image
// buffer must be zero-initialized by the caller.
template <typename T>
void col2im(const T* col, int64_t c, int64_t h, int64_t w, const ConvSpec& spec,
            T* img);

// Cross-correlation with zero padding. x: (N, in_c, H, W);
// weight: (out_c, in_c, kh, kw); bias: (1, out_c, 1, 1) or empty.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>& bias, const ConvSpec& spec);

template <typename T>
Tensor<T> conv2d_backward_input(const Shape4& x_shape, const Tensor<T>& weight,
                                const Tensor<T>& grad_out, const ConvSpec& spec);

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& x, const Shape4& w_shape,
                                 const Tensor<T>& grad_out, const ConvSpec& spec);

// Transposed convolution (gradient-of-convolution semantics).
// x: (N, in_c, H, W); weight: (in_c, out_c, kh, kw); bias: (1, out_c, 1, 1).
template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight,
                                   const Tensor<T>& bias, const ConvSpec& spec);

template <typename T>
Tensor<T> conv_transpose2d_backward_input(const Shape4& x_shape,
                                          const Tensor<T>& weight,
                                          const Tensor<T>& grad_out,
                                          const ConvSpec& spec);

template <typename T>
Tensor<T> conv_transpose2d_backward_weight(const Tensor<T>& x,
                                           const Shape4& w_shape,
                                           const Tensor<T>& grad_out,
                                           const ConvSpec& spec);

// Sums grad_out over batch and spatial dims into a (1, out_c, 1, 1) tensor.
template <typename T>
Tensor<T> bias_grad(const Tensor<T>& grad_out);

// Depthwise valid cross-correlation of every channel with one fixed 2D
// window. window: (1, 1, kh, kw). Output spatial size (h-kh+1, w-kw+1).
template <typename T>
Tensor<T> window_corr_valid(const Tensor<T>& x, const Tensor<T>& window);

// Adjoint of window_corr_valid (scatter of grad_out through the window).
template <typename T>
Tensor<T> window_corr_valid_adjoint(const Shape4& x_shape, const Tensor<T>& window,
                                    const Tensor<T>& grad_out);

}  // namespace kernels

// Shape checks shared by the eager kernels and the tape ops. Throw
// Error::data naming the offending dimensions.
void check_conv_shapes(const Shape4& x, const Shape4& w, const Shape4& b,
                       const ConvSpec& spec);
void check_conv_transpose_shapes(const Shape4& x, const Shape4& w, const Shape4& b,
                                 const ConvSpec& spec);
void check_same_shape(const Shape4& a, const Shape4& b, const char* op);

}  // namespace tofvae
