#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "lds/graphgen.hpp"
#include "oracles.hpp"

using namespace lds;

namespace {

DenseMatrix symmetric_theta(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix t(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) t(i, j) = t(j, i) = rng.uniform();
  return t;
}

}  // namespace

TEST(EdgeDistribution, RejectsInvalidTheta) {
  EXPECT_THROW(EdgeDistribution(DenseMatrix(2, 3)), ShapeError);
  DenseMatrix t(3, 3);
  t(0, 1) = t(1, 0) = 1.5;
  EXPECT_THROW(EdgeDistribution{t}, DomainError);
  t(0, 1) = t(1, 0) = 0.5;
  t(0, 2) = 0.2;
  EXPECT_THROW(EdgeDistribution{t}, DomainError);  // asymmetric
  EXPECT_NO_THROW(EdgeDistribution(t, false, true));
  t(1, 1) = 0.3;
  EXPECT_THROW(EdgeDistribution(t, false, true), DomainError);  // diagonal
  DenseMatrix nan(2, 2);
  nan(0, 1) = nan(1, 0) = std::nan("");
  EXPECT_THROW(EdgeDistribution{nan}, DomainError);
}

TEST(EdgeDistribution, DeterministicAndExpectedEdges) {
  const SparseMatrix a = SparseMatrix::from_triplets(4, 4, {{0, 1, 1.0}, {1, 0, 1.0}, {2, 3, 0.3}, {3, 2, 0.3}});
  const EdgeDistribution d = EdgeDistribution::deterministic(a);
  EXPECT_TRUE(d.is_deterministic());
  EXPECT_EQ(d.expected_edges(), 2.0);
  EXPECT_EQ(sample_adjacency(d, 1).to_dense(), sample_adjacency(d, 2).to_dense());
  EXPECT_EQ(sample_adjacency(d, 1).at(2, 3), 1.0);  // weights binarized
  const EdgeDistribution s(symmetric_theta(5, 3));
  double manual = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) manual += s.theta()(i, j);
  EXPECT_DOUBLE_EQ(s.expected_edges(), manual);
}

TEST(Sampling, SeedDeterminesTheGraphAndSymmetryHolds) {
  const EdgeDistribution d(symmetric_theta(30, 4));
  const SparseMatrix a = sample_adjacency(d, 99);
  EXPECT_EQ(a.to_dense(), sample_adjacency(d, 99).to_dense());
  EXPECT_NE(a.to_dense(), sample_adjacency(d, 100).to_dense());
  EXPECT_TRUE(a.is_symmetric());
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(a.at(i, i), 0.0);
}

TEST(Sampling, EdgeFrequenciesMatchTheta) {
  DenseMatrix t(3, 3);
  t(0, 1) = t(1, 0) = 0.2;
  t(0, 2) = t(2, 0) = 0.7;
  t(1, 2) = t(2, 1) = 0.5;
  const EdgeDistribution d(t);
  const int draws = 20000;
  DenseMatrix freq(3, 3);
  for (int s = 0; s < draws; ++s) freq = add(freq, sample_adjacency(d, static_cast<std::uint64_t>(s)).to_dense());
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double p = t(i, j);
      const double se = std::sqrt(p * (1 - p) / draws);
      EXPECT_NEAR(freq(i, j) / draws, p, 5 * se + 1e-12);
    }
}

TEST(Sampling, DirectedModeDrawsBothDirections) {
  DenseMatrix t(2, 2);
  t(0, 1) = 0.5;
  t(1, 0) = 0.5;
  const EdgeDistribution d(t, false, true);
  bool asym = false;
  for (std::uint64_t s = 0; s < 200 && !asym; ++s) asym = !sample_adjacency(d, s).is_symmetric();
  EXPECT_TRUE(asym);
}

TEST(Normalize, MatchesDenseFormulaForBinaryAndWeighted) {
  Rng rng(5);
  const DenseMatrix bin = oracle::random_symmetric_binary(12, 0.3, rng);
  EXPECT_LE(max_abs_diff(normalize_adjacency(SparseMatrix::from_dense(bin)).to_dense(), oracle::dense_normalized(bin)),
            1e-15);
  const DenseMatrix w = symmetric_theta(9, 6);
  EXPECT_LE(max_abs_diff(normalize_adjacency(SparseMatrix::from_dense(w)).to_dense(), oracle::dense_normalized(w)),
            1e-15);
  // An isolated node keeps only its self-loop with weight 1.
  const SparseMatrix empty = normalize_adjacency(SparseMatrix(3, 3));
  EXPECT_EQ(empty.to_dense(), DenseMatrix::identity(3));
}

TEST(StraightThrough, FoldsSymmetricPairsAndZerosTheDiagonal) {
  const DenseMatrix g = DenseMatrix::from_rows({{9, 1, 2}, {3, 9, 4}, {5, 6, 9}});
  const DenseMatrix r = straight_through_route(g, true, true);
  EXPECT_EQ(r, DenseMatrix::from_rows({{0, 4, 7}, {4, 0, 10}, {7, 10, 0}}));
  EXPECT_EQ(straight_through_route(g, false, false), g);
}

TEST(Projection, ClampsSymmetrizesAndIsIdempotent) {
  const DenseMatrix t = DenseMatrix::from_rows({{0.5, 1.4, -0.2}, {0.8, 0.1, 0.3}, {0.2, 0.3, 2.0}});
  const DenseMatrix p = project_hypercube(t, true, true);
  EXPECT_EQ(p, DenseMatrix::from_rows({{0, 1, 0}, {1, 0, 0.3}, {0, 0.3, 0}}));
  EXPECT_EQ(project_hypercube(p, true, true), p);
  Rng rng(7);
  const DenseMatrix big = oracle::random_matrix(70, 70, rng, -1, 2);
  const DenseMatrix once = project_hypercube(big, true, true);
  EXPECT_EQ(project_hypercube(once, true, true), once);
  EXPECT_NO_THROW(EdgeDistribution{once});
}

TEST(Knn, NeighborsAreClosestAndGraphIsUnionSymmetric) {
  // Points on a line: neighbors are determined by position.
  DenseMatrix x(6, 1);
  const double pos[6] = {0.0, 1.0, 3.0, 6.0, 10.0, 10.5};
  for (int i = 0; i < 6; ++i) x(i, 0) = pos[i];
  const auto table = knn_table(x, 2, Metric::euclidean);
  EXPECT_EQ(table[0], (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(table[3], (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(table[5], (std::vector<std::size_t>{4, 3}));
  const SparseMatrix g = knn_graph_from_table(table, 1);
  EXPECT_TRUE(g.is_symmetric());
  // 1-NN: 0-1, 1-0, 2-1, 3-2, 4-5, 5-4 -> undirected {01, 12, 23, 45}
  EXPECT_EQ(g.nnz(), 8u);
  EXPECT_EQ(g.at(2, 3), 1.0);
  EXPECT_EQ(g.at(0, 2), 0.0);
  EXPECT_THROW(knn_table(x, 6, Metric::euclidean), DomainError);
  EXPECT_THROW(knn_table(x, 0, Metric::euclidean), DomainError);
}

TEST(Knn, CosineIgnoresScale) {
  const DenseMatrix x = DenseMatrix::from_rows({{1, 0}, {100, 1}, {0, 1}, {0.01, 3}});
  const auto table = knn_table(x, 1, Metric::cosine);
  EXPECT_EQ(table[0][0], 1u);
  EXPECT_EQ(table[2][0], 3u);
  const DenseMatrix d = pairwise_distances(x, Metric::cosine);
  EXPECT_NEAR(d(0, 2), 1.0, 1e-15);
  EXPECT_EQ(parse_metric("cosine"), Metric::cosine);
  EXPECT_THROW(parse_metric("manhattan"), ConfigError);
}

TEST(FixedGraphs, ErdosRenyiDenseAndRbf) {
  Rng rng(8);
  const SparseMatrix er = erdos_renyi_graph(200, 0.05, rng);
  const double pairs = 200.0 * 199.0 / 2.0;
  const double edges = er.nnz() / 2.0;
  EXPECT_NEAR(edges, 0.05 * pairs, 5 * std::sqrt(pairs * 0.05 * 0.95));
  EXPECT_TRUE(er.is_symmetric());
  const SparseMatrix dn = dense_graph(5);
  EXPECT_EQ(dn.nnz(), 20u);
  EXPECT_EQ(dn.at(2, 2), 0.0);
  const DenseMatrix x = DenseMatrix::from_rows({{0, 0}, {3, 4}, {6, 8}});
  const SparseMatrix rb = rbf_graph(x, 5.0);
  EXPECT_NEAR(rb.at(0, 1), std::exp(-25.0 / 50.0), 1e-15);
  EXPECT_NEAR(rb.at(0, 2), std::exp(-100.0 / 50.0), 1e-15);
  EXPECT_EQ(median_pairwise_distance(x), 5.0);
  EXPECT_NEAR(rbf_graph(x).at(0, 1), std::exp(-0.5), 1e-15);
}

TEST(ThetaTriples, RoundTripAtFullPrecision) {
  const EdgeDistribution d(symmetric_theta(15, 9));
  std::stringstream ss;
  write_theta_triples(ss, d, 0.0);
  const EdgeDistribution back = read_theta_triples(ss);
  EXPECT_EQ(back.theta(), d.theta());
  EXPECT_EQ(back.expected_edges(), d.expected_edges());
  std::stringstream bad("# n 2 symmetric 1 diag_zero 1\n0 1 0.5\n1 x\n");
  EXPECT_THROW(read_theta_triples(bad), FormatError);
}
