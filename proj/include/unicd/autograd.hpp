#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unicd/tensor.hpp"

namespace unicd {

// Reverse-mode autodiff tape node. Each op output owns a closure that reads
// the node's accumulated grad and pushes contributions into its inputs.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  // Empty when no gradient has reached this node (e.g. frozen inputs).
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(size_t i) const { return node_->value.dim(i); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor t);
Var parameter(Tensor t);
// Output of an op; inputs and closure are dropped when nothing upstream needs a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);
void accumulate_grad(Node& n, const Tensor& g);

// Seeds d(root)/d(root) = 1 (root must have one element) and runs the tape.
void backward(const Var& root);

// Same tensor as a constant: stops gradient flow.
Var detach(const Var& v);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var abs(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape s);

// [N, Ci, H, W] * [Co, Ci, k, k] (+ [Co]) with zero padding k/2, stride 1.
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& b);
Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);
// Non-overlapping k x k mean pooling.
Var avg_pool(const Var& x, int64_t k);
// Half-pixel-centred bilinear resize of [N, C, H, W].
Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w);
Var concat_channels(const std::vector<Var>& xs);
// Mirror along width (horizontal) and/or height (vertical) of the last two axes.
Var flip(const Var& x, bool horizontal, bool vertical);
// Per-pixel L2 normalization across channels of [N, C, H, W].
Var channel_l2_normalize(const Var& x);
// Multiplies [N, C, H, W] by a constant [N, 1, H, W] mask.
Var mask_channels(const Var& x, const Tensor& mask);
// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);

// Plain-tensor helpers sharing the op kernels.
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor resize_nearest(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor flip(const Tensor& x, bool horizontal, bool vertical);

}  // namespace unicd
