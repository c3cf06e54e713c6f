// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/autodiff.hpp"

#include <cmath>

namespace nfbeam::ad {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument(std::string(op) + ": shape mismatch");
}

}  // namespace

enum class Op : std::uint8_t {
  kConst,
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowVec,
  kAddConst,
  kMulConst,
  kMatmul,
  kMatmulNT,
  kRowSoftmax,
  kGelu,
  kSigmoid,
  kLog,
  kClampMin,
  kLayerNorm,
  kSliceRows,
  kSliceCols,
  kConcatRows,
  kConcatCols,
  kSum,
  kWeightedSum,
};

struct Tape::Node {
  Op op;
  bool tracked = false;
  double s = 0.0;        // scalar operand (scale factor, clamp floor, eps)
  int i0 = 0, i1 = 0;    // slice offsets/counts
  std::vector<int> parents;
  Matrix value;
  Matrix grad;           // allocated lazily during backward
  Matrix aux, aux2;      // saved forward intermediates / constant payloads
};

Tape::Tape() { nodes_.reserve(512); }
Tape::~Tape() = default;

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::at(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw InvalidArgument("Tape: invalid node handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix& Tape::value(Var v) const { return at(v).value; }

Matrix Tape::gradient(Var v) const {
  const Node& n = at(v);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tape::tracked(Var v) const { return at(v).tracked; }

std::size_t Tape::num_nodes() const { return nodes_.size(); }

Var Tape::constant(Matrix v) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(v);
  return {push(std::move(n))};
}

Var Tape::leaf(Matrix v) {
  Node n;
  n.op = Op::kLeaf;
  n.tracked = true;
  n.value = std::move(v);
  return {push(std::move(n))};
}

namespace {
bool any_tracked(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.tracked(v)) return true;
  return false;
}
}  // namespace

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  Node n;
  n.op = Op::kAdd;
  n.parents = {a.id, b.id};
  n.tracked = any_tracked(*this, {a, b});
  n.value = value(a) + value(b);
  return {push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  Node n;
  n.op = Op::kSub;
  n.parents = {a.id, b.id};
  n.tracked = any_tracked(*this, {a, b});
  n.value = value(a) - value(b);
  return {push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  Node n;
  n.op = Op::kMul;
  n.parents = {a.id, b.id};
  n.tracked = any_tracked(*this, {a, b});
  n.value = value(a).cwiseProduct(value(b));
  return {push(std::move(n))};
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::kScale;
  n.s = s;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = s * value(a);
  return {push(std::move(n))};
}

Var Tape::add_rowvec(Var a, Var b) {
  if (value(b).rows() != 1 || value(b).cols() != value(a).cols())
    throw InvalidArgument("add_rowvec: b must be 1 x cols(a)");
  Node n;
  n.op = Op::kAddRowVec;
  n.parents = {a.id, b.id};
  n.tracked = any_tracked(*this, {a, b});
  n.value = value(a).rowwise() + value(b).row(0);
  return {push(std::move(n))};
}

Var Tape::add_const(Var a, const Matrix& c) {
  check_same_shape(value(a), c, "add_const");
  Node n;
  n.op = Op::kAddConst;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = value(a) + c;
  return {push(std::move(n))};
}

Var Tape::mul_const(Var a, const Matrix& c) {
  check_same_shape(value(a), c, "mul_const");
  Node n;
  n.op = Op::kMulConst;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.aux = c;
  n.value = value(a).cwiseProduct(c);
  return {push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows())
    throw InvalidArgument("matmul: inner dimension mismatch");
  Node n;
  n.op = Op::kMatmul;
  n.parents = {a.id, b.id};
  n.tracked = any_tracked(*this, {a, b});
  n.value.noalias() = value(a) * value(b);
  return {push(std::move(n))};
}

Var Tape::matmul_nt(Var a, Var b) {
  if (value(a).cols() != value(b).cols())
    throw InvalidArgument("matmul_nt: inner dimension mismatch");
  Node n;
  n.op = Op::kMatmulNT;
  n.parents = {a.id, b.id};
  n.tracked = any_tracked(*this, {a, b});
  n.value.noalias() = value(a) * value(b).transpose();
  return {push(std::move(n))};
}

Var Tape::row_softmax(Var a) {
  Node n;
  n.op = Op::kRowSoftmax;
  n.parents = {a.id};
  n.tracked = tracked(a);
  const Matrix& x = value(a);
  n.value.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - m).exp();
    n.value.row(r) = (e / e.sum()).matrix();
  }
  return {push(std::move(n))};
}

Var Tape::gelu(Var a) {
  Node n;
  n.op = Op::kGelu;
  n.parents = {a.id};
  n.tracked = tracked(a);
  const auto& x = value(a).array();
  n.aux = (kGeluC * (x + kGeluA * x.cube())).tanh().matrix();
  n.value = (0.5 * x * (1.0 + n.aux.array())).matrix();
  return {push(std::move(n))};
}

Var Tape::sigmoid(Var a) {
  Node n;
  n.op = Op::kSigmoid;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  return {push(std::move(n))};
}

Var Tape::log(Var a) {
  if ((value(a).array() <= 0.0).any())
    throw InvalidArgument("log: requires strictly positive input");
  Node n;
  n.op = Op::kLog;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = value(a).array().log().matrix();
  return {push(std::move(n))};
}

Var Tape::clamp_min(Var a, double floor) {
  Node n;
  n.op = Op::kClampMin;
  n.s = floor;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = value(a).cwiseMax(floor);
  return {push(std::move(n))};
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = value(x);
  if (value(gamma).rows() != 1 || value(gamma).cols() != xv.cols() ||
      value(beta).rows() != 1 || value(beta).cols() != xv.cols())
    throw InvalidArgument("layer_norm: gain/bias must be 1 x cols(x)");
  Node n;
  n.op = Op::kLayerNorm;
  n.s = eps;
  n.parents = {x.id, gamma.id, beta.id};
  n.tracked = any_tracked(*this, {x, gamma, beta});
  const Eigen::Index rows = xv.rows(), cols = xv.cols();
  n.aux.resize(rows, cols);   // normalized activations
  n.aux2.resize(rows, 1);     // per-row 1/std
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + eps);
    n.aux.row(r) = ((xv.row(r).array() - mean) * inv_std).matrix();
    n.aux2(r, 0) = inv_std;
  }
  n.value = n.aux;
  n.value.array().rowwise() *= value(gamma).row(0).array();
  n.value.array().rowwise() += value(beta).row(0).array();
  return {push(std::move(n))};
}

Var Tape::slice_rows(Var a, int first, int count) {
  if (first < 0 || count < 1 || first + count > value(a).rows())
    throw InvalidArgument("slice_rows: range out of bounds");
  Node n;
  n.op = Op::kSliceRows;
  n.i0 = first;
  n.i1 = count;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = value(a).middleRows(first, count);
  return {push(std::move(n))};
}

Var Tape::slice_cols(Var a, int first, int count) {
  if (first < 0 || count < 1 || first + count > value(a).cols())
    throw InvalidArgument("slice_cols: range out of bounds");
  Node n;
  n.op = Op::kSliceCols;
  n.i0 = first;
  n.i1 = count;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = value(a).middleCols(first, count);
  return {push(std::move(n))};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  for (Var p : parts) {
    if (value(p).cols() != cols)
      throw InvalidArgument("concat_rows: column mismatch");
    rows += value(p).rows();
  }
  Node n;
  n.op = Op::kConcatRows;
  n.value.resize(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    n.parents.push_back(p.id);
    n.tracked = n.tracked || tracked(p);
    n.value.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  return {push(std::move(n))};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = value(parts[0]).rows();
  for (Var p : parts) {
    if (value(p).rows() != rows)
      throw InvalidArgument("concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  n.value.resize(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    n.parents.push_back(p.id);
    n.tracked = n.tracked || tracked(p);
    n.value.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  return {push(std::move(n))};
}

Var Tape::sum(Var a) {
  Node n;
  n.op = Op::kSum;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.value = Matrix::Constant(1, 1, value(a).sum());
  return {push(std::move(n))};
}

Var Tape::weighted_sum(Var a, const Matrix& weights) {
  check_same_shape(value(a), weights, "weighted_sum");
  Node n;
  n.op = Op::kWeightedSum;
  n.parents = {a.id};
  n.tracked = tracked(a);
  n.aux = weights;
  n.value = Matrix::Constant(1, 1, value(a).cwiseProduct(weights).sum());
  return {push(std::move(n))};
}

void Tape::backward(Var root) {
  if (backward_done_) throw InvalidArgument("Tape::backward: already run");
  backward_done_ = true;
  const Node& r = at(root);
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw InvalidArgument("Tape::backward: root must be a scalar");
  grad_buffer(root.id)(0, 0) = 1.0;

  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.tracked || n.grad.size() == 0) continue;
    const Matrix& g = n.grad;
    auto parent = [&](int slot) -> Node& {
      return nodes_[static_cast<std::size_t>(n.parents[
          static_cast<std::size_t>(slot)])];
    };
    auto push_to = [&](int slot, const auto& expr) {
      Node& p = parent(slot);
      if (!p.tracked) return;
      grad_buffer(n.parents[static_cast<std::size_t>(slot)]).noalias() += expr;
    };

    switch (n.op) {
      case Op::kConst:
      case Op::kLeaf:
        break;
      case Op::kAdd:
        push_to(0, g);
        push_to(1, g);
        break;
      case Op::kSub:
        push_to(0, g);
        push_to(1, -g);
        break;
      case Op::kMul:
        push_to(0, g.cwiseProduct(parent(1).value));
        push_to(1, g.cwiseProduct(parent(0).value));
        break;
      case Op::kScale:
        push_to(0, n.s * g);
        break;
      case Op::kAddRowVec:
        push_to(0, g);
        push_to(1, g.colwise().sum());
        break;
      case Op::kAddConst:
        push_to(0, g);
        break;
      case Op::kMulConst:
        push_to(0, g.cwiseProduct(n.aux));
        break;
      case Op::kMatmul:
        push_to(0, g * parent(1).value.transpose());
        push_to(1, parent(0).value.transpose() * g);
        break;
      case Op::kMatmulNT:
        push_to(0, g * parent(1).value);
        push_to(1, g.transpose() * parent(0).value);
        break;
      case Op::kRowSoftmax: {
        if (!parent(0).tracked) break;
        Matrix dx(n.value.rows(), n.value.cols());
        for (Eigen::Index row = 0; row < n.value.rows(); ++row) {
          const double dot = g.row(row).dot(n.value.row(row));
          dx.row(row) = n.value.row(row).cwiseProduct(
              (g.row(row).array() - dot).matrix());
        }
        push_to(0, dx);
        break;
      }
      case Op::kGelu: {
        if (!parent(0).tracked) break;
        const auto& x = parent(0).value.array();
        const auto& t = n.aux.array();
        const Matrix dx =
            (g.array() *
             (0.5 * (1.0 + t) +
              0.5 * x * (1.0 - t.square()) * kGeluC *
                  (1.0 + 3.0 * kGeluA * x.square())))
                .matrix();
        push_to(0, dx);
        break;
      }
      case Op::kSigmoid:
        push_to(0, (g.array() * n.value.array() * (1.0 - n.value.array()))
                       .matrix());
        break;
      case Op::kLog:
        push_to(0, (g.array() / parent(0).value.array()).matrix());
        break;
      case Op::kClampMin:
        push_to(0, (g.array() *
                    (parent(0).value.array() >= n.s).cast<double>())
                       .matrix());
        break;
      case Op::kLayerNorm: {
        const Matrix& xhat = n.aux;
        const Eigen::Index rows = xhat.rows(), cols = xhat.cols();
        const auto gamma = parent(1).value.row(0);
        if (parent(1).tracked)
          push_to(1, (g.cwiseProduct(xhat)).colwise().sum());
        if (parent(2).tracked) push_to(2, g.colwise().sum());
        if (parent(0).tracked) {
          Matrix dx(rows, cols);
          const double d = static_cast<double>(cols);
          for (Eigen::Index row = 0; row < rows; ++row) {
            const Eigen::RowVectorXd dxhat =
                g.row(row).cwiseProduct(gamma);
            const double s1 = dxhat.sum();
            const double s2 = dxhat.dot(xhat.row(row));
            dx.row(row) = (n.aux2(row, 0) / d) *
                          (d * dxhat.array() - s1 -
                           xhat.row(row).array() * s2)
                              .matrix();
          }
          push_to(0, dx);
        }
        break;
      }
      case Op::kSliceRows: {
        if (!parent(0).tracked) break;
        Matrix& pg = grad_buffer(n.parents[0]);
        pg.middleRows(n.i0, n.i1) += g;
        break;
      }
      case Op::kSliceCols: {
        if (!parent(0).tracked) break;
        Matrix& pg = grad_buffer(n.parents[0]);
        pg.middleCols(n.i0, n.i1) += g;
        break;
      }
      case Op::kConcatRows: {
        Eigen::Index row = 0;
        for (std::size_t s = 0; s < n.parents.size(); ++s) {
          Node& p = nodes_[static_cast<std::size_t>(n.parents[s])];
          if (p.tracked)
            grad_buffer(n.parents[s]) += g.middleRows(row, p.value.rows());
          row += p.value.rows();
        }
        break;
      }
      case Op::kConcatCols: {
        Eigen::Index col = 0;
        for (std::size_t s = 0; s < n.parents.size(); ++s) {
          Node& p = nodes_[static_cast<std::size_t>(n.parents[s])];
          if (p.tracked)
            grad_buffer(n.parents[s]) += g.middleCols(col, p.value.cols());
          col += p.value.cols();
        }
        break;
      }
      case Op::kSum:
        push_to(0, Matrix::Constant(parent(0).value.rows(),
                                    parent(0).value.cols(), g(0, 0)));
        break;
      case Op::kWeightedSum:
        push_to(0, g(0, 0) * n.aux);
        break;
    }
  }
}

}  // namespace nfbeam::ad
