#include "tofvae/tape.hpp"

#include <fmt/format.h>

#include <cmath>

namespace tofvae {

namespace {

template <typename T>
T bcast(const Tensor<T>& t, int64_t i) {
  return t.numel() == 1 ? t.data()[0] : t.data()[i];
}

// Collapses a gradient at the broadcast output shape back onto a parent that
// may have been a scalar operand.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape4& target) {
  if (g.shape() == target) return g;
  T acc = 0;
  for (int64_t i = 0; i < g.numel(); ++i) acc += g.data()[i];
  return Tensor<T>::scalar(acc);
}

void check_broadcast(const Shape4& a, const Shape4& b, const char* op) {
  if (a == b || a.numel() == 1 || b.numel() == 1) return;
  throw Error::data(fmt::format("{}: operand shapes {} and {} differ and neither is scalar",
                                op, a.str(), b.str()));
}

}  // namespace

template <typename T>
typename Tape<T>::Id Tape<T>::record(Tensor<T> value, bool requires_grad,
                                     BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
void Tape<T>::check_id(Id id) const {
  if (id < 0 || id >= static_cast<Id>(nodes_.size()))
    throw Error::data(fmt::format("tape: node id {} out of range [0,{})", id,
                                  nodes_.size()));
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (value.empty()) throw Error::data("tape: cannot record an empty tensor");
  return record(std::move(value), requires_grad, nullptr);
}

template <typename T>
const Tensor<T>& Tape<T>::value(Id id) const {
  check_id(id);
  return nodes_[id].value;
}

template <typename T>
bool Tape<T>::requires_grad(Id id) const {
  check_id(id);
  return nodes_[id].requires_grad;
}

template <typename T>
typename Tape<T>::Id Tape<T>::conv2d(Id x, Id w, Id b, const ConvSpec& spec) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& wv = value(w);
  const Tensor<T> no_bias;
  const Tensor<T>& bv = (b == kNoBias) ? no_bias : value(b);
  Tensor<T> y = kernels::conv2d_forward(xv, wv, bv, spec);
  const bool rg =
      requires_grad(x) || requires_grad(w) || (b != kNoBias && requires_grad(b));
  return record(std::move(y), rg,
                [x, w, b, spec, xs = xv.shape(), ws = wv.shape()](
                    Tape& t, const Tensor<T>& g) {
                  if (t.requires_grad(x))
                    t.accumulate(x, kernels::conv2d_backward_input(xs, t.value(w), g, spec));
                  if (t.requires_grad(w))
                    t.accumulate(w, kernels::conv2d_backward_weight(t.value(x), ws, g, spec));
                  if (b != kNoBias && t.requires_grad(b))
                    t.accumulate(b, kernels::bias_grad(g));
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::conv_transpose2d(Id x, Id w, Id b,
                                               const ConvSpec& spec) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& wv = value(w);
  const Tensor<T> no_bias;
  const Tensor<T>& bv = (b == kNoBias) ? no_bias : value(b);
  Tensor<T> y = kernels::conv_transpose2d_forward(xv, wv, bv, spec);
  const bool rg =
      requires_grad(x) || requires_grad(w) || (b != kNoBias && requires_grad(b));
  return record(std::move(y), rg,
                [x, w, b, spec, xs = xv.shape(), ws = wv.shape()](
                    Tape& t, const Tensor<T>& g) {
                  if (t.requires_grad(x))
                    t.accumulate(x, kernels::conv_transpose2d_backward_input(
                                        xs, t.value(w), g, spec));
                  if (t.requires_grad(w))
                    t.accumulate(w, kernels::conv_transpose2d_backward_weight(
                                        t.value(x), ws, g, spec));
                  if (b != kNoBias && t.requires_grad(b))
                    t.accumulate(b, kernels::bias_grad(g));
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaky_relu(Id x, T slope) {
  if (!(slope >= T(0) && slope < T(1)))
    throw Error::data(fmt::format("leaky_relu: slope {} outside [0,1)", slope));
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) {
    const T v = xv.data()[i];
    y.data()[i] = v > T(0) ? v : slope * v;
  }
  return record(std::move(y), requires_grad(x),
                [x, slope](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& xv = t.value(x);
                  Tensor<T> dx(xv.shape());
                  // x == 0 takes the negative-branch slope
                  for (int64_t i = 0; i < xv.numel(); ++i)
                    dx.data()[i] = g.data()[i] * (xv.data()[i] > T(0) ? T(1) : slope);
                  t.accumulate(x, dx);
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sigmoid(Id x) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) {
    const T v = xv.data()[i];
    // never exponentiates a positive argument, so large |x| stays finite
    if (v >= T(0)) {
      const T e = std::exp(-v);
      y.data()[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      y.data()[i] = e / (T(1) + e);
    }
  }
  const Id self = static_cast<Id>(nodes_.size());
  return record(std::move(y), requires_grad(x),
                [x, self](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& yv = t.value(self);
                  Tensor<T> dx(yv.shape());
                  for (int64_t i = 0; i < yv.numel(); ++i) {
                    const T s = yv.data()[i];
                    dx.data()[i] = g.data()[i] * s * (T(1) - s);
                  }
                  t.accumulate(x, dx);
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::clamp(Id x, T lo, T hi) {
  if (!(lo <= hi))
    throw Error::data(fmt::format("clamp: lo {} exceeds hi {}", lo, hi));
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i)
    y.data()[i] = std::min(std::max(xv.data()[i], lo), hi);
  return record(std::move(y), requires_grad(x),
                [x, lo, hi](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& xv = t.value(x);
                  Tensor<T> dx(xv.shape());
                  // gradient passes only where the value was untouched
                  for (int64_t i = 0; i < xv.numel(); ++i) {
                    const T v = xv.data()[i];
                    dx.data()[i] = (v >= lo && v <= hi) ? g.data()[i] : T(0);
                  }
                  t.accumulate(x, dx);
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  check_broadcast(av.shape(), bv.shape(), "add");
  const Shape4 os = av.numel() >= bv.numel() ? av.shape() : bv.shape();
  Tensor<T> y(os);
  for (int64_t i = 0; i < y.numel(); ++i)
    y.data()[i] = bcast(av, i) + bcast(bv, i);
  return record(std::move(y), requires_grad(a) || requires_grad(b),
                [a, b, as = av.shape(), bs = bv.shape()](Tape& t, const Tensor<T>& g) {
                  if (t.requires_grad(a)) t.accumulate(a, reduce_to_shape(g, as));
                  if (t.requires_grad(b)) t.accumulate(b, reduce_to_shape(g, bs));
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  check_broadcast(av.shape(), bv.shape(), "sub");
  const Shape4 os = av.numel() >= bv.numel() ? av.shape() : bv.shape();
  Tensor<T> y(os);
  for (int64_t i = 0; i < y.numel(); ++i)
    y.data()[i] = bcast(av, i) - bcast(bv, i);
  return record(std::move(y), requires_grad(a) || requires_grad(b),
                [a, b, as = av.shape(), bs = bv.shape()](Tape& t, const Tensor<T>& g) {
                  if (t.requires_grad(a)) t.accumulate(a, reduce_to_shape(g, as));
                  if (t.requires_grad(b)) {
                    Tensor<T> ng(g.shape());
                    for (int64_t i = 0; i < g.numel(); ++i) ng.data()[i] = -g.data()[i];
                    t.accumulate(b, reduce_to_shape(ng, bs));
                  }
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  check_broadcast(av.shape(), bv.shape(), "mul");
  const Shape4 os = av.numel() >= bv.numel() ? av.shape() : bv.shape();
  Tensor<T> y(os);
  for (int64_t i = 0; i < y.numel(); ++i)
    y.data()[i] = bcast(av, i) * bcast(bv, i);
  return record(std::move(y), requires_grad(a) || requires_grad(b),
                [a, b](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& av = t.value(a);
                  const Tensor<T>& bv = t.value(b);
                  if (t.requires_grad(a)) {
                    Tensor<T> da(g.shape());
                    for (int64_t i = 0; i < g.numel(); ++i)
                      da.data()[i] = g.data()[i] * bcast(bv, i);
                    t.accumulate(a, reduce_to_shape(da, av.shape()));
                  }
                  if (t.requires_grad(b)) {
                    Tensor<T> db(g.shape());
                    for (int64_t i = 0; i < g.numel(); ++i)
                      db.data()[i] = g.data()[i] * bcast(av, i);
                    t.accumulate(b, reduce_to_shape(db, bv.shape()));
                  }
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::div(Id a, Id b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  check_broadcast(av.shape(), bv.shape(), "div");
  const Shape4 os = av.numel() >= bv.numel() ? av.shape() : bv.shape();
  Tensor<T> y(os);
  for (int64_t i = 0; i < y.numel(); ++i)
    y.data()[i] = bcast(av, i) / bcast(bv, i);
  return record(std::move(y), requires_grad(a) || requires_grad(b),
                [a, b](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& av = t.value(a);
                  const Tensor<T>& bv = t.value(b);
                  if (t.requires_grad(a)) {
                    Tensor<T> da(g.shape());
                    for (int64_t i = 0; i < g.numel(); ++i)
                      da.data()[i] = g.data()[i] / bcast(bv, i);
                    t.accumulate(a, reduce_to_shape(da, av.shape()));
                  }
                  if (t.requires_grad(b)) {
                    Tensor<T> db(g.shape());
                    for (int64_t i = 0; i < g.numel(); ++i) {
                      const T bi = bcast(bv, i);
                      db.data()[i] = -g.data()[i] * bcast(av, i) / (bi * bi);
                    }
                    t.accumulate(b, reduce_to_shape(db, bv.shape()));
                  }
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_scalar(Id x, T s) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) y.data()[i] = xv.data()[i] + s;
  return record(std::move(y), requires_grad(x),
                [x](Tape& t, const Tensor<T>& g) { t.accumulate(x, g); });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul_scalar(Id x, T s) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) y.data()[i] = xv.data()[i] * s;
  return record(std::move(y), requires_grad(x),
                [x, s](Tape& t, const Tensor<T>& g) {
                  Tensor<T> dx(g.shape());
                  for (int64_t i = 0; i < g.numel(); ++i) dx.data()[i] = g.data()[i] * s;
                  t.accumulate(x, dx);
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::exp(Id x) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) y.data()[i] = std::exp(xv.data()[i]);
  const Id self = static_cast<Id>(nodes_.size());
  return record(std::move(y), requires_grad(x),
                [x, self](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& yv = t.value(self);
                  Tensor<T> dx(yv.shape());
                  for (int64_t i = 0; i < yv.numel(); ++i)
                    dx.data()[i] = g.data()[i] * yv.data()[i];
                  t.accumulate(x, dx);
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::square(Id x) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) {
    const T v = xv.data()[i];
    y.data()[i] = v * v;
  }
  return record(std::move(y), requires_grad(x),
                [x](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& xv = t.value(x);
                  Tensor<T> dx(xv.shape());
                  for (int64_t i = 0; i < xv.numel(); ++i)
                    dx.data()[i] = g.data()[i] * T(2) * xv.data()[i];
                  t.accumulate(x, dx);
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::fixed_window_mean(Id x, const Tensor<T>& window) {
  const Shape4 ws = window.shape();
  if (ws.n != 1 || ws.c != 1)
    throw Error::data(fmt::format("fixed_window_mean: window shape {} must be [1x1xKHxKW]",
                                  ws.str()));
  T sum = 0;
  for (int64_t i = 0; i < window.numel(); ++i) {
    if (window.data()[i] < T(0))
      throw Error::data("fixed_window_mean: window weights must be nonnegative");
    sum += window.data()[i];
  }
  if (std::abs(double(sum) - 1.0) > 1e-6)
    throw Error::data(fmt::format("fixed_window_mean: window weights sum to {}, expected 1",
                                  double(sum)));
  const Tensor<T>& xv = value(x);
  Tensor<T> y = kernels::window_corr_valid(xv, window);
  return record(std::move(y), requires_grad(x),
                [x, window, xs = xv.shape()](Tape& t, const Tensor<T>& g) {
                  t.accumulate(x, kernels::window_corr_valid_adjoint(xs, window, g));
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::reduce_sum(Id x) {
  const Tensor<T>& xv = value(x);
  T acc = 0;
  for (int64_t i = 0; i < xv.numel(); ++i) acc += xv.data()[i];
  return record(Tensor<T>::scalar(acc), requires_grad(x),
                [x, xs = xv.shape()](Tape& t, const Tensor<T>& g) {
                  t.accumulate(x, Tensor<T>(xs, g.data()[0]));
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::reduce_mean(Id x) {
  const Tensor<T>& xv = value(x);
  T acc = 0;
  for (int64_t i = 0; i < xv.numel(); ++i) acc += xv.data()[i];
  const T inv = T(1) / T(xv.numel());
  return record(Tensor<T>::scalar(acc * inv), requires_grad(x),
                [x, xs = xv.shape(), inv](Tape& t, const Tensor<T>& g) {
                  t.accumulate(x, Tensor<T>(xs, g.data()[0] * inv));
                });
}

template <typename T>
typename Tape<T>::Id Tape<T>::custom(const std::vector<Id>& parents,
                                     Tensor<T> value_in, BackwardFn backward) {
  bool rg = false;
  for (Id p : parents) rg = rg || requires_grad(p);
  if (value_in.empty()) throw Error::data("tape: cannot record an empty tensor");
  return record(std::move(value_in), rg, std::move(backward));
}

template <typename T>
void Tape<T>::accumulate(Id id, const Tensor<T>& g) {
  check_id(id);
  if (!in_backward_)
    throw Error::data("tape: accumulate called outside backward()");
  Node& node = nodes_[id];
  if (!node.requires_grad) return;
  if (!(g.shape() == node.value.shape()))
    throw Error::data(fmt::format("tape: gradient shape {} does not match node shape {}",
                                  g.shape().str(), node.value.shape().str()));
  if (!has_grad_[id]) {
    grads_[id] = g;
    has_grad_[id] = 1;
  } else {
    Tensor<T>& acc = grads_[id];
    for (int64_t i = 0; i < g.numel(); ++i) acc.data()[i] += g.data()[i];
  }
}

template <typename T>
std::unordered_map<typename Tape<T>::Id, Tensor<T>> Tape<T>::backward(Id root) {
  check_id(root);
  if (nodes_[root].value.numel() != 1)
    throw Error::data(fmt::format("backward: root shape {} is not scalar",
                                  nodes_[root].value.shape().str()));
  grads_.assign(nodes_.size(), Tensor<T>());
  has_grad_.assign(nodes_.size(), 0);
  in_backward_ = true;
  std::unordered_map<Id, Tensor<T>> out;
  try {
    if (nodes_[root].requires_grad) accumulate(root, Tensor<T>::scalar(T(1)));
    for (Id id = root; id >= 0; --id)
      if (has_grad_[id] && nodes_[id].backward) nodes_[id].backward(*this, grads_[id]);
    for (Id id = 0; id < static_cast<Id>(nodes_.size()); ++id)
      if (has_grad_[id]) out.emplace(id, std::move(grads_[id]));
  } catch (...) {
    in_backward_ = false;
    grads_.clear();
    has_grad_.clear();
    throw;
  }
  in_backward_ = false;
  grads_.clear();
  has_grad_.clear();
  return out;
}

template class Tape<float>;
template class Tape<double>;
template class Tape<long double>;

}  // namespace tofvae
