#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "lds/gcn.hpp"
#include "oracles.hpp"

using namespace lds;

namespace {

LabeledSplit ten_node_split() {
  return LabeledSplit({0, 1, 2, 0, 1, 2, 0, 1, 2, 0}, 3, {0, 1, 2}, {3, 4}, {5, 6}, {7, 8, 9});
}

}  // namespace

TEST(Gcn, ForwardMatchesPerNodeOracle) {
  Rng rng(1);
  const DenseMatrix x = oracle::random_matrix(12, 5, rng);
  const DenseMatrix a = oracle::random_symmetric_binary(12, 0.3, rng);
  const GcnParams p = init_gcn(5, 7, 3, rng);
  const DenseMatrix a_hat = oracle::dense_normalized(a);
  const DenseMatrix ours = forward(p, x, normalize_adjacency(SparseMatrix::from_dense(a)));
  EXPECT_LE(max_abs_diff(ours, oracle::per_node_gcn(x, a_hat, p.w1, p.w2)), 1e-13);
}

TEST(Gcn, TapedLogitsEqualUntapedLogits) {
  Rng rng(2);
  const DenseMatrix x = oracle::random_matrix(9, 4, rng);
  const SparseMatrix a_hat = normalize_adjacency(SparseMatrix::from_dense(oracle::random_symmetric_binary(9, 0.4, rng)));
  const GcnParams p = init_gcn(4, 5, 3, rng);
  const DropoutMasks m = make_dropout_masks(9, 4, 5, 0.5, 77);
  Tape t;
  const GcnVars w{t.leaf(p.w1), t.leaf(p.w2)};
  const Var z = gcn_logits(w, t.constant(x), t.sparse_leaf(a_hat), &m);
  EXPECT_EQ(z.value(), gcn_logits(p, x, a_hat, &m));
}

TEST(Gcn, GlorotRangeAndShapes) {
  Rng rng(3);
  const GcnParams p = init_gcn(30, 16, 4, rng);
  EXPECT_EQ(p.n_features(), 30u);
  EXPECT_EQ(p.hidden(), 16u);
  EXPECT_EQ(p.n_classes(), 4u);
  const double r = std::sqrt(6.0 / 46.0);
  for (double v : p.w1.values()) EXPECT_LE(std::abs(v), r);
}

TEST(Dropout, MasksArePureFunctionsOfTheSeed) {
  const DropoutMasks a = make_dropout_masks(50, 20, 16, 0.5, 5);
  const DropoutMasks b = make_dropout_masks(50, 20, 16, 0.5, 5);
  EXPECT_EQ(a.input, b.input);
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_NE(a.input, make_dropout_masks(50, 20, 16, 0.5, 6).input);
  std::size_t kept = 0;
  for (double v : a.input.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    if (v != 0.0) ++kept;
  }
  const double n = 1000.0;
  EXPECT_NEAR(kept / n, 0.5, 5 * std::sqrt(0.25 / n));
  const DenseMatrix none = dropout_mask(4, 4, 0.0, 1);
  for (double v : none.values()) EXPECT_EQ(v, 1.0);
}

TEST(Loss, InnerLossIsSummedCrossEntropyPlusWeightPenalty) {
  Rng rng(4);
  const LabeledSplit split = ten_node_split();
  const DenseMatrix x = oracle::random_matrix(10, 3, rng);
  const SparseMatrix a_hat = normalize_adjacency(SparseMatrix::from_dense(oracle::random_symmetric_binary(10, 0.3, rng)));
  const GcnParams p = init_gcn(3, 4, 3, rng);
  const LossConfig cfg{0.01, 0.5};
  Tape t;
  const GcnVars w{t.leaf(p.w1), t.leaf(p.w2)};
  const double got = inner_loss(w, t.constant(x), t.sparse_leaf(a_hat), split, cfg, nullptr).scalar();
  const DenseMatrix probs = forward(p, x, a_hat);
  double expect = 0.0;
  for (std::size_t v : split.train()) expect -= std::log(probs(v, static_cast<std::size_t>(split.label(v))));
  double sq = 0.0;
  for (double v : p.w1.values()) sq += v * v;
  expect += 0.01 * sq;
  EXPECT_NEAR(got, expect, 1e-12);
  const double outer = outer_loss(w, t.constant(x), t.sparse_leaf(a_hat), split).scalar();
  double expect_outer = 0.0;
  for (std::size_t v : split.val_a()) expect_outer -= std::log(probs(v, static_cast<std::size_t>(split.label(v))));
  EXPECT_NEAR(outer, expect_outer, 1e-12);
}

TEST(Loss, ConfigValidation) {
  EXPECT_THROW((LossConfig{-1.0, 0.5}.validate()), ConfigError);
  EXPECT_THROW((LossConfig{0.0, 1.0}.validate()), ConfigError);
  EXPECT_NO_THROW((LossConfig{0.0, 0.0}.validate()));
}

TEST(Split, RejectsOverlapAndMissingLabels) {
  EXPECT_THROW(LabeledSplit({0, 1, 0}, 2, {0}, {0}, {1}, {2}), ShapeError);
  EXPECT_THROW(LabeledSplit({0, -1, 0}, 2, {0}, {1}, {}, {2}), ShapeError);
  EXPECT_THROW(LabeledSplit({0, 1, 0}, 2, {0}, {5}, {}, {}), ShapeError);
  EXPECT_THROW(LabeledSplit({0, 3, 0}, 2, {1}, {}, {}, {}), ShapeError);
  EXPECT_NO_THROW(LabeledSplit({0, -1, 1}, 2, {0}, {2}, {}, {}));
}

TEST(Split, TestLabelsOnlyThroughTheCountedPath) {
  const LabeledSplit split = ten_node_split();
  EXPECT_THROW(split.label(8), Error);
  EXPECT_THROW(split.targets(MaskKind::test), Error);
  EXPECT_FALSE(split.has_known_label(7));
  EXPECT_EQ(split.test_label_passes(), 0u);
  const LabeledSplit copy = split;
  EXPECT_EQ(copy.read_test_labels(), (std::vector<int>{1, 2, 0}));
  EXPECT_EQ(split.test_label_passes(), 1u);
  const DenseMatrix y = split.targets(MaskKind::train);
  for (std::size_t v = 3; v < 10; ++v)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y(v, c), 0.0);
  EXPECT_EQ(y(2, 2), 1.0);
  EXPECT_EQ(split.validation(), (std::vector<std::size_t>{3, 4, 5, 6}));
}

TEST(Accuracy, CountsArgmaxMatchesAndCountsTestReads) {
  const LabeledSplit split = ten_node_split();
  DenseMatrix pred(10, 3);
  const int guess[10] = {0, 1, 0, 0, 2, 2, 0, 1, 2, 1};
  for (std::size_t v = 0; v < 10; ++v) pred(v, static_cast<std::size_t>(guess[v])) = 1.0;
  EXPECT_DOUBLE_EQ(accuracy(pred, split, MaskKind::train), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(accuracy(pred, split, MaskKind::val_a), 0.5);
  EXPECT_DOUBLE_EQ(accuracy(pred, split, MaskKind::validation), 0.75);
  EXPECT_EQ(split.test_label_passes(), 0u);
  EXPECT_DOUBLE_EQ(accuracy(pred, split, MaskKind::test), 2.0 / 3.0);
  EXPECT_EQ(split.test_label_passes(), 1u);
  const LabeledSplit no_b({0, 1}, 2, {0}, {1}, {}, {});
  EXPECT_THROW(accuracy(DenseMatrix(2, 2), no_b, MaskKind::val_b), DomainError);
}

TEST(Predict, EmpiricalMeanOverSamples) {
  Rng rng(5);
  const DenseMatrix x = oracle::random_matrix(6, 3, rng);
  const GcnParams p = init_gcn(3, 4, 2, rng);
  DenseMatrix theta(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) theta(i, j) = theta(j, i) = 0.5;
  const EdgeDistribution dist(theta);
  Rng a(9), b(9);
  const DenseMatrix mean = predict_empirical(p, x, dist, 4, a);
  DenseMatrix manual(6, 2);
  for (int s = 0; s < 4; ++s) manual = add(manual, forward(p, x, sample(dist, b).normalized));
  EXPECT_LE(max_abs_diff(mean, scale(manual, 0.25)), 1e-15);
  Rng c(1);
  EXPECT_THROW(predict_empirical(p, x, dist, 0, c), DomainError);
  // A deterministic graph gives the single forward pass regardless of S.
  const SparseMatrix g = SparseMatrix::from_dense(oracle::random_symmetric_binary(6, 0.5, rng));
  Rng d(2);
  EXPECT_EQ(predict_empirical(p, x, EdgeDistribution::deterministic(g), 16, d),
            forward(p, x, normalize_adjacency(g)));
}

TEST(Predict, CrossEntropyValueMatchesManual) {
  const DenseMatrix z = DenseMatrix::from_rows({{1.0, 2.0}, {0.0, 0.0}, {3.0, -1.0}});
  const double want = -std::log(std::exp(2.0) / (std::exp(1.0) + std::exp(2.0))) + std::log(2.0);
  EXPECT_NEAR(cross_entropy_value(z, {1, 1, 0}, {0, 1}), want, 1e-14);
}
