#pragma once

#include <array>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "gmixseq/rng.hpp"

namespace gmixseq {

/// Learnable weight with its gradient accumulator. Persists across training
/// steps; tapes bind leaves to it so backward() deposits gradients here.
struct Param {
  Matrix value;
  Matrix grad;

  Param() = default;
  explicit Param(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

using NamedParams = std::vector<std::pair<std::string, Param*>>;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; values are owned by the tape.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Gradient of the last backward() w.r.t. this node. Empty until backward.
  const Matrix& grad() const;
  bool requires_grad() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::array<Eigen::Index, 2> shape() const { return {rows(), cols()}; }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int index() const { return idx_; }

 private:
  friend class Tape;
  Tensor(Tape* t, int i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

/// Records every operation of one forward pass in topological (creation)
/// order. backward() sweeps the record once in reverse. Single-shot: a second
/// backward on the same tape is rejected. Confine a tape to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a copy of `v`.
  Tensor leaf(Matrix v, bool requires_grad = false);
  /// Leaf holding a constant (never differentiated).
  Tensor constant(Matrix v) { return leaf(std::move(v), false); }
  Tensor constant(double v) { return leaf(Matrix::Constant(1, 1, v), false); }
  /// Leaf bound to a Param: backward() accumulates into p.grad. Binding the
  /// same Param again on this tape returns the existing leaf.
  Tensor param(Param& p);

  /// Reverse sweep from a scalar loss. Populates grads of every reachable
  /// requires_grad node and deposits leaf gradients into bound Params.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool backward_run() const { return backward_run_; }

  // --- internals used by op implementations ---
  using BackFn = std::function<void(Tape&, int self)>;
  Tensor emit(Matrix value, bool requires_grad, BackFn back, std::vector<int> parents);
  const Matrix& value_at(int idx) const { return nodes_[static_cast<std::size_t>(idx)].value; }
  const Matrix& grad_at(int idx) const;
  bool requires_grad_at(int idx) const { return nodes_[static_cast<std::size_t>(idx)].requires_grad; }
  /// Adds `delta` into the gradient of node `idx` (no-op unless it needs grad).
  void add_grad(int idx, const Matrix& delta);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool touched = false;  // reachable from the loss during backward
    Param* sink = nullptr;
    BackFn back;
    std::vector<int> parents;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Param*, int> param_cache_;
  bool backward_run_ = false;
};

// ---------------------------------------------------------------------------
// Ops. All are pure: input buffers are never modified. Every result is
// checked finite; a NaN/Inf result throws std::domain_error.
// ---------------------------------------------------------------------------

// Elementwise; `a` and `b` must have equal shapes, or one of them may be a
// single row broadcast over the leading dimension of the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // throws std::domain_error on non-positive input
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sqrt(const Tensor& a);

/// Numerically stable softmax along `axis` (1 = within each row).
Tensor softmax(const Tensor& a, int axis = 1);
/// log(sum(exp(x))) along `axis`; axis=1 yields an n x 1 column.
Tensor logsumexp(const Tensor& a, int axis = 1);

Tensor sum(const Tensor& a);   // 1x1
Tensor mean(const Tensor& a);  // 1x1
Tensor sum_rows(const Tensor& a);   // column-wise sum  -> 1 x cols
Tensor mean_rows(const Tensor& a);  // column-wise mean -> 1 x cols

Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n);
Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}
inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor reverse_cols(const Tensor& a);

/// Row-wise layer normalization with learnable gain/shift (1 x cols each).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

// ---------------------------------------------------------------------------
// Gradient verification.
// ---------------------------------------------------------------------------

/// Max over coordinates of |analytic - central difference| / max(1, |central
/// difference|) for a scalar-valued f evaluated at x. h in [1e-6, 1e-4].
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Matrix& x, double h = 1e-5);

/// Same check for a Param feeding an externally built loss. `loss_value`
/// re-evaluates the loss from scratch; `analytic` is the gradient already
/// accumulated for `p`. Checks `max_coords` randomly chosen coordinates
/// (all of them when max_coords <= 0).
double param_grad_check(const std::function<double()>& loss_value, Param& p, const Matrix& analytic, double h = 1e-5,
                        int max_coords = -1, Rng* rng = nullptr);

}  // namespace gmixseq
