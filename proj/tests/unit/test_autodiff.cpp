// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "nfbeam/autodiff.hpp"
#include "nfbeam/rng.hpp"

using namespace nfbeam;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  RandomStream rs(seed, 1);
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rs.uniform(lo, hi);
  return m;
}

// Central finite differences of a scalar-valued graph builder with respect
// to every entry of every input, checked against one reverse sweep. The
// builder receives leaves made from `inputs` and must return a 1 x 1 root.
void check_gradients(
    const std::vector<Matrix>& inputs,
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    double step = 1e-6, double tol = 1e-6) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  const Var root = build(tape, leaves);
  REQUIRE(tape.value(root).size() == 1);
  tape.backward(root);

  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const Matrix grad = tape.gradient(leaves[which]);
    for (int c = 0; c < inputs[which].cols(); ++c)
      for (int r = 0; r < inputs[which].rows(); ++r) {
        auto eval = [&](double delta) {
          std::vector<Matrix> shifted = inputs;
          shifted[which](r, c) += delta;
          Tape t2;
          std::vector<Var> l2;
          for (const auto& m : shifted) l2.push_back(t2.leaf(m));
          return t2.value(build(t2, l2))(0, 0);
        };
        const double fd = (eval(step) - eval(-step)) / (2.0 * step);
        const double an = grad(r, c);
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
        CHECK(std::abs(fd - an) / denom < tol);
      }
  }
}

// Weights that make the scalar reduction sensitive to every entry.
Matrix probe(int rows, int cols) { return random_matrix(rows, cols, 999, 0.3, 1.7); }

}  // namespace

TEST_CASE("arithmetic ops differentiate correctly") {
  const Matrix a = random_matrix(3, 4, 1), b = random_matrix(3, 4, 2);
  const Matrix w = probe(3, 4);

  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.add(l[0], l[1]), w);
  });
  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.sub(l[0], l[1]), w);
  });
  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.mul(l[0], l[1]), w);
  });
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.scale(l[0], -2.5), w);
  });
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.sum(t.add_const(l[0], b));
  });
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.sum(t.mul_const(l[0], b));
  });
  const Matrix row = random_matrix(1, 4, 3);
  check_gradients({a, row}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.add_rowvec(l[0], l[1]), w);
  });
}

TEST_CASE("matrix products differentiate correctly") {
  const Matrix a = random_matrix(3, 5, 4), b = random_matrix(5, 2, 5);
  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.matmul(l[0], l[1]), probe(3, 2));
  });
  const Matrix c = random_matrix(4, 5, 6);
  check_gradients({a, c}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.matmul_nt(l[0], l[1]), probe(3, 4));
  });
  // Shape violations are rejected eagerly.
  Tape t;
  const Var x = t.leaf(a), y = t.leaf(c);
  CHECK_THROWS_AS(t.matmul(x, y), InvalidArgument);
  CHECK_THROWS_AS(t.add(x, t.leaf(Matrix::Zero(2, 2))), InvalidArgument);
}

TEST_CASE("nonlinearities differentiate correctly") {
  const Matrix a = random_matrix(4, 6, 7);
  const Matrix w = probe(4, 6);
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.gelu(l[0]), w);
  });
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.sigmoid(l[0]), w);
  });
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.row_softmax(l[0]), w);
  });
  const Matrix pos = random_matrix(3, 3, 8, 0.2, 2.0);
  check_gradients({pos}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.log(l[0]), probe(3, 3));
  });
  // clamp_min: probe away from the kink so FD is valid.
  const Matrix far = random_matrix(3, 3, 9, 0.5, 2.0);
  check_gradients({far}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.clamp_min(l[0], 0.1), probe(3, 3));
  });
  const Matrix below = random_matrix(3, 3, 10, -2.0, -0.5);
  check_gradients({below}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.clamp_min(l[0], 0.1), probe(3, 3));
  });
}

TEST_CASE("softmax produces row distributions; clamp floors values") {
  Tape t;
  const Matrix a = random_matrix(5, 7, 11, -3.0, 3.0);
  const Matrix s = t.value(t.row_softmax(t.constant(a)));
  for (int r = 0; r < 5; ++r) {
    CHECK(s.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.row(r).minCoeff() > 0.0);
    // Ordering is preserved within a row.
    int amax_in, amax_out;
    a.row(r).maxCoeff(&amax_in);
    s.row(r).maxCoeff(&amax_out);
    CHECK(amax_in == amax_out);
  }
  const Matrix cl = t.value(t.clamp_min(t.constant(a), 0.25));
  CHECK(cl.minCoeff() >= 0.25);
  CHECK_THROWS_AS(t.log(t.constant(Matrix::Zero(2, 2))), InvalidArgument);
}

TEST_CASE("layer_norm normalizes rows and differentiates correctly") {
  const Matrix x = random_matrix(4, 8, 12, -2.0, 2.0);
  Tape t;
  const Var g = t.constant(Matrix::Ones(1, 8));
  const Var b = t.constant(Matrix::Zero(1, 8));
  const Matrix y = t.value(t.layer_norm(t.constant(x), g, b));
  for (int r = 0; r < 4; ++r) {
    CHECK(y.row(r).mean() == doctest::Approx(0.0).scale(1e-9));
    const double var = y.row(r).array().square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps-deflated
  }

  const Matrix gamma = random_matrix(1, 8, 13, 0.5, 1.5);
  const Matrix beta = random_matrix(1, 8, 14);
  check_gradients(
      {x, gamma, beta},
      [&](Tape& tp, const std::vector<Var>& l) {
        return tp.weighted_sum(tp.layer_norm(l[0], l[1], l[2]), probe(4, 8));
      },
      1e-6, 3e-6);
}

TEST_CASE("slices and concats route gradients to the right places") {
  const Matrix a = random_matrix(6, 5, 15), b = random_matrix(2, 5, 16);
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.slice_rows(l[0], 2, 3), probe(3, 5));
  });
  check_gradients({a}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.slice_cols(l[0], 1, 2), probe(6, 2));
  });
  check_gradients({a, b}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.concat_rows({l[0], l[1]}), probe(8, 5));
  });
  const Matrix c = random_matrix(6, 3, 17);
  check_gradients({a, c}, [&](Tape& t, const std::vector<Var>& l) {
    return t.weighted_sum(t.concat_cols({l[0], l[1]}), probe(6, 8));
  });

  Tape t;
  const Var x = t.leaf(a);
  CHECK_THROWS_AS(t.slice_rows(x, 5, 3), InvalidArgument);
  CHECK_THROWS_AS(t.slice_cols(x, 0, 6), InvalidArgument);
  CHECK_THROWS_AS(t.concat_rows({}), InvalidArgument);
  CHECK_THROWS_AS(t.concat_rows({x, t.leaf(Matrix::Zero(1, 4))}),
                  InvalidArgument);
}

TEST_CASE("gradients accumulate across shared subgraphs") {
  // f = sum(x .* x) + 3 sum(x) => df/dx = 2 x + 3, two paths into x.
  const Matrix x = random_matrix(3, 3, 18);
  Tape t;
  const Var l = t.leaf(x);
  const Var root = t.add(t.sum(t.mul(l, l)), t.scale(t.sum(l), 3.0));
  t.backward(root);
  const Matrix g = t.gradient(l);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r)
      CHECK(g(r, c) == doctest::Approx(2.0 * x(r, c) + 3.0).epsilon(1e-12));
}

TEST_CASE("tape bookkeeping: constants, unreached leaves, single backward") {
  Tape t;
  const Var c = t.constant(Matrix::Ones(2, 2));
  const Var used = t.leaf(Matrix::Ones(2, 2));
  const Var untouched = t.leaf(Matrix::Ones(3, 1));
  CHECK_FALSE(t.tracked(c));
  CHECK(t.tracked(used));

  const Var root = t.sum(t.mul(used, c));
  t.backward(root);
  CHECK(t.gradient(used).isApprox(Matrix::Ones(2, 2)));
  // Leaves outside the graph report a zero gradient of their own shape.
  const Matrix gu = t.gradient(untouched);
  CHECK(gu.rows() == 3);
  CHECK(gu.cols() == 1);
  CHECK(gu.norm() == 0.0);

  CHECK_THROWS_AS(t.backward(root), InvalidArgument);  // one sweep per tape

  Tape t2;
  const Var nonscalar = t2.leaf(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(t2.backward(nonscalar), InvalidArgument);
  CHECK_THROWS_AS(t2.value(Var{}), InvalidArgument);
}
