#pragma once

#include "csiwm/tensor.hpp"

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

/// Minimal reverse-mode differentiation over dense double tensors.
///
/// Every op returns a `Var` wrapping a node that owns its value, its inputs
/// and a closure propagating the node's gradient into them. Nodes whose
/// inputs carry no gradient are created without a closure, so forward passes
/// through frozen weights keep no graph alive.
namespace csiwm::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until backward reaches the node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::string_view op = "leaf";
  bool requires_grad = false;

  void accumulate(const Tensor& g);
  void accumulate(const Eigen::Ref<const Eigen::VectorXd>& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  /// Gradient after backward(); zeros of the value's shape if none arrived.
  Tensor grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::string_view op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return bool(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);
Var detach(const Var& x);

/// Backpropagates from a scalar root into every reachable node.
void backward(const Var& root);

// Elementwise, same shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

// Broadcast of a length-C vector along the last axis of x.
Var add_rowwise(const Var& x, const Var& bias);
Var mul_rowwise(const Var& x, const Var& gain);

/// x: (..., K) viewed as rows, w: (K, M) -> (..., M).
Var matmul(const Var& x, const Var& w);
/// Batched product over the leading axis: (B, N, K) x (B, K, M) -> (B, N, M).
Var batched_matmul(const Var& a, const Var& b);
Var transpose(const Var& a);          // 2-d
Var batched_transpose(const Var& a);  // swaps the last two axes of a rank-3 tensor
Var reshape(const Var& a, Shape shape);
/// Rows [begin, end) along the leading axis.
Var slice(const Var& a, Index begin, Index end);
Var concat(const std::vector<Var>& parts, Index axis);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, Index axis);
/// Inserts a new axis of length n at `axis`, repeating the input.
Var broadcast_axis(const Var& a, Index axis, Index n);

/// Normalizes each column of the (rows, C) view over the rows using batch
/// statistics. The biased batch mean and variance are written to the
/// optional outputs for running-statistics bookkeeping.
Var batch_norm(const Var& x, double eps, Eigen::VectorXd* batch_mean = nullptr,
               Eigen::VectorXd* batch_var = nullptr);
/// Zero mean, unit (biased) variance across the last axis of every row.
Var standardize_rows(const Var& x, double eps);
/// Unit Euclidean norm across the last axis of every row.
Var l2_normalize_rows(const Var& x, double eps);

/// Matrix exponential of every trailing (D, D) block.
Var expm(const Var& g);

/// Stride-1 "same" convolution on NHWC input. Weight is (kh*kw*Cin, Cout)
/// with rows ordered (ky, kx, cin).
Var conv2d(const Var& x, const Var& weight, Index kernel_h, Index kernel_w);
/// 2x2 average pooling on NHWC, ceil mode (partial windows average what they cover).
Var avg_pool2(const Var& x);

/// Negative-control hook for gradient verification: when enabled, the GeLU
/// backward rule is deliberately wrong.
void set_corrupt_gelu_gradient(bool enabled);
bool corrupt_gelu_gradient();

}  // namespace csiwm::ad
