// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_AUTODIFF_HPP
#define NFBEAM_AUTODIFF_HPP

#include <cstdint>
#include <vector>

#include "nfbeam/common.hpp"

namespace nfbeam::ad {

using Matrix = Eigen::MatrixXd;

/// Handle to a tape node. Only valid for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode automatic differentiation over dense double matrices.
///
/// Forward evaluation is eager: every op computes its value immediately and
/// records one node. backward() then sweeps the tape once in reverse creation
/// order, which is always a valid topological order. A tape is intended to be
/// built, differentiated and discarded per optimization step.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked input: gradients never flow into it.
  Var constant(Matrix v);
  /// Tracked input (model parameter); read its gradient after backward().
  Var leaf(Matrix v);

  const Matrix& value(Var v) const;
  /// Accumulated gradient of the most recent backward(); zero matrix when the
  /// node was not reached.
  Matrix gradient(Var v) const;
  bool tracked(Var v) const;
  std::size_t num_nodes() const;

  // Elementwise / broadcast arithmetic.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);          ///< Hadamard product (same shape)
  Var scale(Var a, double s);
  Var add_rowvec(Var a, Var b);   ///< a (n x m) + broadcast row b (1 x m)
  Var add_const(Var a, const Matrix& c);
  Var mul_const(Var a, const Matrix& c);

  // Linear algebra.
  Var matmul(Var a, Var b);       ///< a * b
  Var matmul_nt(Var a, Var b);    ///< a * b^T

  // Nonlinearities.
  Var row_softmax(Var a);         ///< softmax over each row
  Var gelu(Var a);                ///< tanh approximation
  Var sigmoid(Var a);
  Var log(Var a);                 ///< elementwise natural log
  Var clamp_min(Var a, double floor);
  /// Per-row normalization with learnable gain/bias rows (1 x cols).
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  // Structure.
  Var slice_rows(Var a, int first, int count);
  Var slice_cols(Var a, int first, int count);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);

  // Reductions (results are 1 x 1).
  Var sum(Var a);
  Var weighted_sum(Var a, const Matrix& weights);  ///< sum(a .* weights)

  /// Seeds d(root)/d(root) = 1 and accumulates gradients into every tracked
  /// ancestor. `root` must be 1 x 1. May be called once per tape.
  void backward(Var root);

 private:
  struct Node;
  std::vector<Node> nodes_;
  bool backward_done_ = false;

  int push(Node n);
  const Node& at(Var v) const;
  Matrix& grad_buffer(int id);
};

}  // namespace nfbeam::ad

#endif  // NFBEAM_AUTODIFF_HPP
