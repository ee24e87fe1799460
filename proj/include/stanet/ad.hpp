#pragma once

#include "stanet/types.hpp"

#include <deque>
#include <functional>
#include <vector>

namespace stanet::ad {

class Tape;

/// Opaque handle to a node on a Tape.
class Ref {
 public:
  Ref() = default;
  bool valid() const { return index_ != static_cast<std::size_t>(-1); }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  explicit Ref(std::size_t i) : index_(i) {}
  std::size_t index_ = static_cast<std::size_t>(-1);
};

/// Reverse-mode gradient tape over matrix-valued nodes. Nodes are created in
/// forward order; backward() sweeps them in reverse, which is a valid
/// topological order because every operation only consumes earlier nodes.
/// A tape is single-use: build a forward pass, call backward once, read the
/// gradients off the parameter nodes, and discard the tape.
class Tape {
 public:
  /// A node gradients never flow into (inputs, fixed masks, ...).
  Ref constant(Matrix value);
  /// A node whose gradient the caller will read after backward().
  Ref param(Matrix value);

  const Matrix& value(Ref r) const { return at(r).value; }
  const Matrix& grad(Ref r) const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 (root must be 1x1) and accumulates gradients
  /// into every gradient-bearing node that root depends on.
  void backward(Ref root);

  Ref add(Ref a, Ref b);
  Ref sub(Ref a, Ref b);
  Ref hadamard(Ref a, Ref b);
  Ref matmul(Ref a, Ref b);
  Ref scale(Ref a, double s);
  Ref sigmoid(Ref a);
  Ref tanh(Ref a);
  Ref relu(Ref a);

  /// Same-size convolution of a fixed input image with a learnable odd
  /// square kernel plus scalar bias (1x1 node). Gradients flow to the kernel
  /// and bias only; the input is baked into the node as a constant.
  Ref conv2d_same(const Matrix& input, Ref kernel, Ref bias);

  /// Non-overlapping ragged-window max pooling; backward scatters each
  /// pooled cell's gradient to the position that won the window.
  Ref maxpool(Ref a, int window_rows, int window_cols);

  /// Column vector -> real part of its DFT. The cosine transform matrix is
  /// symmetric, so backward applies the same transform to the gradient.
  Ref real_fft(Ref a);

  Ref vstack(Ref a, Ref b);
  Ref hstack(const std::vector<Ref>& parts);
  /// k 1x1 nodes -> k x 1 column.
  Ref stack_scalars(const std::vector<Ref>& scalars);
  /// Column vector -> softmax column (max-shifted for stability).
  Ref softmax(Ref a);
  /// Row i of a matrix node, returned as a column vector.
  Ref row_as_col(Ref a, Eigen::Index i);
  /// h x w matrix -> 1 x (h*w) row, row-major element order.
  Ref flatten_to_row(Ref a);
  /// 1 x w row -> copies x w matrix of identical rows.
  Ref broadcast_rows(Ref row, Eigen::Index copies);
  /// (pred - target)^2 of a 1x1 node.
  Ref squared_error(Ref pred, double target);
  Ref mean_scalars(const std::vector<Ref>& scalars);

  /// One gated-recurrence step fused into a single node to keep epoch tapes
  /// small: with u = [h_prev, x],
  ///   z = sigmoid(W_z u + b_z), r = sigmoid(W_r u + b_r),
  ///   c = tanh(W [r*h_prev, x] + b_h), out = (1-z)*h_prev + z*c.
  /// Shapes: h_prev hidden x 1, x in x 1, gate matrices hidden x (hidden+in),
  /// biases hidden x 1.
  Ref fgru_step(Ref h_prev, Ref x, Ref w_z, Ref w_r, Ref w, Ref b_z, Ref b_r, Ref b_h);

  /// Scaled attention score (q . tanh(p h)) / sqrt(rows(h)) as a 1x1 node;
  /// p is hidden x hidden, q is 1 x hidden, h is hidden x 1.
  Ref attn_score(Ref p, Ref q, Ref h);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;  // null when no input carries gradient
    bool needs_grad = false;
  };

  Node& at(Ref r);
  const Node& at(Ref r) const;
  Ref push(Matrix value, bool needs_grad, std::function<void()> back);

  std::deque<Node> nodes_;  // deque: stable addresses for backward closures
};

}  // namespace stanet::ad
