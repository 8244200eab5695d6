#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records one forward evaluation as a list of nodes, each holding its
// value and a closure that pushes the node's gradient to its inputs. Ops are
// coarse (a whole multi-head attention or layer norm is one node) so that a
// transformer forward pass stays at a few dozen nodes per layer.

#include "eeg2rep/types.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>

namespace eeg2rep::ad {

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  /// With grad disabled no closures are stored and backward() is unavailable;
  /// used for pure forward evaluation.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);
  /// A leaf whose gradient is added into *grad_sink by backward(). A null
  /// sink makes the leaf a constant.
  Var parameter(const Matrix& value, Matrix* grad_sink);

  /// Records an op result. `backward` is dropped unless some input requires
  /// a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// Adds `g` into the gradient of `v` (no-op if v needs no gradient).
  template <class Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.grad_ready) {
      n.grad = g;
      n.grad_ready = true;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 `loss` and propagates to every
  /// parameter sink.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_ready = false;
    Backward backward;
    Matrix* sink = nullptr;
  };
  bool grad_enabled_;
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops. Token matrices are row-major in meaning: one row per token.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var matmul(const Var& a, const Var& b);
/// x + 1 * row, broadcasting a 1 x d row over every row of x.
Var add_row(const Var& x, const Var& row);
/// x W + 1 b with W (in x out) and b (1 x out).
Var linear(const Var& x, const Var& w, const Var& b);
/// Per-row standardization followed by gamma * . + beta (both 1 x d).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gelu(const Var& x);
/// Scaled dot-product attention with `heads` heads on column slices of
/// q (nq x d), k (nk x d), v (nk x d). Returns nq x d.
Var attention(const Var& q, const Var& k, const Var& v, int heads);
Var gather_rows(const Var& x, std::span<const int> rows);
/// Column means, 1 x d.
Var mean_rows(const Var& x);
/// Vertically stacks 1 x d rows.
Var stack_rows(std::span<const Var> rows);
/// Sum of squared entries of (x - target), 1 x 1.
Var squared_error_sum(const Var& x, const Matrix& target);
/// sum_k weight_k * term_k for 1 x 1 terms.
Var weighted_sum(std::span<const std::pair<double, Var>> terms);
/// Hinge on per-column standard deviation (population variance), 1 x 1.
Var variance_hinge(const Var& r, double target, double eps);
/// Mean over columns of the squared off-diagonal covariance, 1 x 1.
Var offdiag_covariance(const Var& r);
/// Per-channel temporal convolution with zero "same" padding.
/// x (C x L) constant, w (C x K), b (C x 1). Returns C x L.
Var depthwise_conv1d(const Matrix& x, const Var& w, const Var& b);
/// Channel mixing: (W x + b 1^T)^T with x (C x L), W (F x C), b (F x 1).
/// Returns L x F (one row per time step).
Var channel_mix(const Var& x, const Var& w, const Var& b);
/// Non-overlapping max over `pool` consecutive rows; rows must divide.
Var max_pool_rows(const Var& x, int pool);
/// Mean softmax cross-entropy of logits (n x K) against labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Per-head attention probability matrices for the given projected
/// queries and keys; exposed for inspection and tests.
std::vector<Matrix> attention_weights(const Matrix& q, const Matrix& k, int heads);

double gelu_value(double x);

}  // namespace eeg2rep::ad
