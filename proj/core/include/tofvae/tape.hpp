#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "tofvae/tensor.hpp"

namespace tofvae {

// Wengert-list reverse-mode tape. Ops append nodes; a node's inputs always
// have smaller ids, so descending-id traversal is a reverse topological order.
// Tensors are immutable once recorded. Single-threaded per tape.
template <typename T>
class Tape {
 public:
  using Id = int32_t;
  static constexpr Id kNoBias = -1;

  // `grad` is the accumulated gradient of the backward root w.r.t. this node.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad)>;

  Id leaf(Tensor<T> value, bool requires_grad = true);
  Id constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value(Id id) const;
  bool requires_grad(Id id) const;
  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  Id conv2d(Id x, Id w, Id b, const ConvSpec& spec);
  Id conv_transpose2d(Id x, Id w, Id b, const ConvSpec& spec);
  Id leaky_relu(Id x, T slope);
  Id sigmoid(Id x);
  Id clamp(Id x, T lo, T hi);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id div(Id a, Id b);
  Id add_scalar(Id x, T s);
  Id mul_scalar(Id x, T s);
  Id exp(Id x);
  Id square(Id x);
  Id fixed_window_mean(Id x, const Tensor<T>& window);
  Id reduce_mean(Id x);
  Id reduce_sum(Id x);

  // Extension point: record an externally computed value with a caller-built
  // backward. `requires_grad` of the node follows its parents.
  Id custom(const std::vector<Id>& parents, Tensor<T> value, BackwardFn backward);

  // Adds into the gradient slot of `id`; no-op for nodes outside the
  // differentiable subgraph. Only valid inside backward().
  void accumulate(Id id, const Tensor<T>& g);

  // Seeds d(root)/d(root) = 1 and sweeps the list in descending id order.
  // `root` must hold a single element. Returns gradients keyed by node id;
  // non-participating nodes are absent.
  std::unordered_map<Id, Tensor<T>> backward(Id root);

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Id record(Tensor<T> value, bool requires_grad, BackwardFn fn);
  void check_id(Id id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;  // dense slots, live only during backward()
  std::vector<char> has_grad_;
  bool in_backward_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Tape<long double>;

}  // namespace tofvae
