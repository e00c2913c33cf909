#include <gtest/gtest.h>

#include <functional>
#include <string>

#include "lds/tape.hpp"
#include "oracles.hpp"

using namespace lds;

namespace {

using UnaryOp = std::function<Var(const Var&)>;

// f(X) = <W, op(X)> for a fixed random W; returns analytic and FD gradients.
double unary_error(const UnaryOp& op, const DenseMatrix& x0, std::uint64_t seed = 1) {
  Tape probe;
  const Var shape = op(probe.leaf(x0));
  Rng rng(seed);
  const DenseMatrix w = oracle::random_matrix(shape.rows(), shape.cols(), rng);
  auto f = [&](const DenseMatrix& x) {
    Tape t;
    return frobenius_dot(op(t.leaf(x)), t.constant(w)).scalar();
  };
  Tape t;
  const Var x = t.leaf(x0);
  const Var g = t.grad(frobenius_dot(op(x), t.constant(w)), {x})[0];
  return oracle::relative_error(g.value(), oracle::central_difference(f, x0));
}

DenseMatrix random(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return oracle::random_matrix(r, c, rng, lo, hi);
}

}  // namespace

TEST(TapeOps, ElementwiseUnaryGradients) {
  const DenseMatrix pos = random(4, 5, 2, 0.2, 2.0);
  const DenseMatrix any = random(4, 5, 3);
  DenseMatrix inner = random(4, 5, 4, 0.1, 0.9);  // away from the clamp corners
  DenseMatrix away = any;
  for (double& v : away.values()) v += v > 0 ? 0.1 : -0.1;  // away from the relu kink
  EXPECT_LE(unary_error([](const Var& x) { return relu(x); }, away), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return log(x); }, pos), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return exp(x); }, any), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return sqrt(x); }, pos), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return recip(x); }, pos), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return clamp01(x); }, inner), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return scale(x, -2.5); }, any), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return add_scalar(x, 3.0); }, any), 1e-8);
  EXPECT_LE(unary_error([](const Var& x) { return transpose(x); }, any), 1e-8);
}

TEST(TapeOps, ReductionsBroadcastsAndSoftmax) {
  const DenseMatrix x = random(5, 4, 5, -3.0, 3.0);
  EXPECT_LE(unary_error([](const Var& v) { return sum(v); }, x), 1e-8);
  EXPECT_LE(unary_error([](const Var& v) { return row_sum(v); }, x), 1e-8);
  EXPECT_LE(unary_error([](const Var& v) { return broadcast_cols(row_sum(v), 3); }, x), 1e-8);
  EXPECT_LE(unary_error([](const Var& v) { return broadcast_scalar(sum(v), 2, 3); }, x), 1e-8);
  EXPECT_LE(unary_error([](const Var& v) { return row_softmax(v); }, x), 1e-8);
  EXPECT_LE(unary_error([](const Var& v) { return row_log_softmax(v); }, x), 1e-8);
}

TEST(TapeOps, BinaryGradientsInBothArguments) {
  const DenseMatrix a = random(3, 4, 6), b = random(4, 2, 7), c = random(3, 4, 8, 0.5, 2.0);
  const DenseMatrix a2 = random(3, 4, 9);
  auto with_const = [](auto op, const DenseMatrix& other, bool left) {
    return [=](const Var& x) {
      const Var o = x.tape()->constant(other);
      return left ? op(x, o) : op(o, x);
    };
  };
  auto mm = [](const Var& p, const Var& q) { return matmul(p, q); };
  auto ad = [](const Var& p, const Var& q) { return add(p, q); };
  auto sb = [](const Var& p, const Var& q) { return sub(p, q); };
  auto hd = [](const Var& p, const Var& q) { return hadamard(p, q); };
  auto dv = [](const Var& p, const Var& q) { return divide(p, q); };
  EXPECT_LE(unary_error(with_const(mm, b, true), a), 1e-8);
  EXPECT_LE(unary_error(with_const(mm, a, false), b), 1e-8);
  using BinaryOp = std::function<Var(const Var&, const Var&)>;
  for (const BinaryOp& op : {BinaryOp(ad), BinaryOp(sb), BinaryOp(hd)}) {
    EXPECT_LE(unary_error(with_const(op, a2, true), a), 1e-8);
    EXPECT_LE(unary_error(with_const(op, a2, false), a), 1e-8);
  }
  EXPECT_LE(unary_error(with_const(dv, c, true), a), 1e-8);
  EXPECT_LE(unary_error(with_const(dv, a, false), c), 1e-8);
}

TEST(TapeOps, SpmmGradientCoversAbsentEntries) {
  Rng rng(10);
  DenseMatrix s = oracle::random_matrix(5, 5, rng);
  s(0, 1) = s(2, 3) = 0.0;  // structural zeros still get a derivative
  const DenseMatrix b = random(5, 3, 11), w = random(5, 3, 12);
  auto f = [&](const DenseMatrix& sd) {
    Tape t;
    return frobenius_dot(spmm(t.sparse_leaf(SparseMatrix::from_dense(sd)), t.constant(b)), t.constant(w))
        .scalar();
  };
  Tape t;
  const Var sv = t.sparse_leaf(SparseMatrix::from_dense(s));
  const Var bv = t.leaf(b);
  const auto g = t.grad(frobenius_dot(spmm(sv, bv), t.constant(w)), {sv, bv});
  EXPECT_LE(oracle::relative_error(g[0].value(), oracle::central_difference(f, s)), 1e-8);
  EXPECT_EQ(g[0].value(), matmul(w, transpose(b)));
  EXPECT_NE(g[0].value()(0, 1), 0.0);
  EXPECT_EQ(g[1].value(), matmul(transpose(s), w));
}

TEST(TapeOps, SpmmThroughSparseTransposeReachesTheSource) {
  const DenseMatrix s = random(4, 6, 13), b = random(4, 2, 14), w = random(6, 2, 15);
  auto f = [&](const DenseMatrix& sd) {
    Tape t;
    const Var st = sparse_transpose(t.sparse_leaf(SparseMatrix::from_dense(sd)));
    return frobenius_dot(spmm(st, t.constant(b)), t.constant(w)).scalar();
  };
  Tape t;
  const Var sv = t.sparse_leaf(SparseMatrix::from_dense(s));
  const Var st = sparse_transpose(sv);
  const auto g = t.grad(frobenius_dot(spmm(st, t.constant(b)), t.constant(w)), {sv, st});
  EXPECT_LE(oracle::relative_error(g[0].value(), oracle::central_difference(f, s)), 1e-8);
  EXPECT_LE(oracle::relative_error(transpose(g[1].value()), g[0].value()), 1e-15);
}

TEST(TapeOps, NormalizeAdjacencyMatchesTheDenseFormula) {
  Rng rng(16);
  DenseMatrix a(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) a(i, j) = a(j, i) = rng.uniform(0.1, 0.9);
  Tape t0;
  EXPECT_LE(max_abs_diff(normalize_adjacency(t0.sparse_leaf(SparseMatrix::from_dense(a))).sparse_value().to_dense(),
                         oracle::dense_normalized(a)),
            1e-15);
  const DenseMatrix w = random(6, 6, 17);
  auto f = [&](const DenseMatrix& ad) {
    double s = 0.0;
    const DenseMatrix n = oracle::dense_normalized(ad);
    for (std::size_t k = 0; k < n.size(); ++k) s += n.data()[k] * w.data()[k];
    return s;
  };
  Tape t;
  const Var av = t.sparse_leaf(SparseMatrix::from_dense(a));
  const Var nrm = normalize_adjacency(av);
  const Var y = frobenius_dot(spmm(nrm, t.constant(DenseMatrix::identity(6))), t.constant(w));
  const Var g = t.grad(y, {av})[0];
  EXPECT_LE(oracle::relative_error(g.value(), oracle::central_difference(f, a)), 1e-8);
}

TEST(TapeSecondOrder, HessianVectorProductMatchesDifferencedGradients) {
  const DenseMatrix a = random(4, 3, 18), x0 = random(3, 2, 19), v = random(3, 2, 20);
  auto loss = [&](Tape& t, const Var& x) {
    const Var z = matmul(t.constant(a), x);
    return sum(row_log_softmax(hadamard(z, exp(z))));
  };
  auto grad_dot_v = [&](const DenseMatrix& x) {
    Tape t;
    const Var xv = t.leaf(x);
    return frobenius_dot(t.grad(loss(t, xv), {xv})[0], t.constant(v)).scalar();
  };
  Tape t;
  const Var x = t.leaf(x0);
  const Var g = t.grad(loss(t, x), {x})[0];
  const Var hv = t.grad(frobenius_dot(g, t.constant(v)), {x})[0];
  EXPECT_LE(oracle::relative_error(hv.value(), oracle::central_difference(grad_dot_v, x0)), 1e-7);
}

TEST(TapeSecondOrder, MixedSecondDerivativeThroughSpmm) {
  // d/dS <dL/dB, V> with L = sum(relu-free smooth f(S B)).
  const DenseMatrix s0 = random(4, 4, 21), b0 = random(4, 3, 22), v = random(4, 3, 23);
  auto mixed = [&](const DenseMatrix& s) {
    Tape t;
    const Var sv = t.sparse_leaf(SparseMatrix::from_dense(s));
    const Var bv = t.leaf(b0);
    const Var l = sum(exp(scale(spmm(sv, bv), 0.5)));
    return frobenius_dot(t.grad(l, {bv})[0], t.constant(v)).scalar();
  };
  Tape t;
  const Var sv = t.sparse_leaf(SparseMatrix::from_dense(s0));
  const Var bv = t.leaf(b0);
  const Var gb = t.grad(sum(exp(scale(spmm(sv, bv), 0.5))), {bv})[0];
  const Var gs = t.grad(frobenius_dot(gb, t.constant(v)), {sv})[0];
  EXPECT_LE(oracle::relative_error(gs.value(), oracle::central_difference(mixed, s0)), 1e-7);
}

TEST(Tape, UnusedWrtGetsZerosAndShapesAreChecked) {
  Tape t;
  const Var x = t.leaf(DenseMatrix(2, 2, 1.0));
  const Var y = t.leaf(DenseMatrix(3, 1, 1.0));
  const Var g = t.grad(sum(x), {y})[0];
  EXPECT_EQ(g.value(), DenseMatrix(3, 1, 0.0));
  EXPECT_THROW(matmul(x, y), ShapeError);
  EXPECT_THROW(spmm(x, x), ShapeError);
  Tape other;
  EXPECT_THROW(add(x, other.leaf(DenseMatrix(2, 2))), Error);
}
