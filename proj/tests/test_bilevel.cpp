#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "lds/bilevel.hpp"
#include "oracles.hpp"

using namespace lds;

namespace {

struct Instance {
  Problem problem;
  InnerState start;
};

// 8 nodes, 4 features, 3 classes, hidden 6.
Instance small_instance(OptimizerKind kind, double beta, std::uint64_t seed = 7) {
  Rng rng(seed);
  auto x = std::make_shared<const DenseMatrix>(oracle::random_matrix(8, 4, rng));
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};
  LabeledSplit split(labels, 3, {0, 1, 2}, {3, 4, 5}, {6}, {7});
  LossConfig loss{5e-4, beta};
  OptimizerConfig opt;
  opt.kind = kind;
  opt.gamma = kind == OptimizerKind::adam ? 0.01 : 0.05;
  Instance in{Problem(x, split, loss, opt), {}};
  in.start = InnerState::fresh(init_gcn(4, 6, 3, rng));
  return in;
}

std::shared_ptr<const SparseMatrix> continuous_adjacency(const DenseMatrix& a) {
  return std::make_shared<const SparseMatrix>(SparseMatrix::from_dense(a));
}

// F after `steps` replayed updates from `start`, every step and F on graph `a`.
double unrolled_outer(const Problem& pr, const InnerState& start, const DenseMatrix& a,
                      std::size_t steps, std::uint64_t mask_seed) {
  auto adj = continuous_adjacency(a);
  InnerState s = start;
  for (std::size_t k = 0; k < steps; ++k) s = inner_step_on(pr, s, adj, 0, mask_seed + k).state;
  const SparseMatrix a_hat = normalize_adjacency(*adj);
  return cross_entropy_value(gcn_logits(s.params, *pr.x, a_hat), pr.split.val_a().empty()
                                                                     ? std::vector<int>{}
                                                                     : std::vector<int>{0, 1, 2, 0, 1, 2, 0, 1},
                             pr.split.val_a());
}

DenseMatrix relaxed_graph(std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix a(8, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      if (i != j) a(i, j) = rng.uniform(0.1, 0.9);
  return a;
}

void check_unrolled_fd(OptimizerKind kind, double beta, double tol) {
  Instance in = small_instance(kind, beta);
  const DenseMatrix a = relaxed_graph(11);
  auto adj = continuous_adjacency(a);
  // Two warm-up steps so the moment buffers are nonzero.
  InnerState s = in.start;
  for (int k = 0; k < 2; ++k) s = inner_step_on(in.problem, s, adj, 0, 100 + k).state;

  std::vector<StepRecord> window;
  InnerState cur = s;
  for (std::size_t k = 0; k < 3; ++k) {
    auto r = inner_step_on(in.problem, cur, adj, 0, 200 + k);
    window.push_back(r.record);
    cur = r.state;
  }
  std::vector<std::shared_ptr<const SparseMatrix>> back(3, adj);
  const DenseMatrix g = unrolled_adjacency_gradient(in.problem, window, back, cur, adj, true);

  const DenseMatrix fd = oracle::central_difference(
      [&](const DenseMatrix& ap) { return unrolled_outer(in.problem, s, ap, 3, 200); }, a);
  EXPECT_LE(oracle::relative_error(g, fd), tol);
}

}  // namespace

TEST(Hypergradient, ScalarSurrogateHandChainRule) {
  // L(w, th) = (w - th)^2 / 2, one SGD step from w0 = 0 with gamma = 0.5,
  // F(w) = w^2 / 2 at th = 2: dF/dth = w1 * gamma = 0.5.
  Tape t;
  const Var th = t.leaf(DenseMatrix(1, 1, 2.0));
  const Var w0 = t.leaf(DenseMatrix(1, 1, 0.0));
  const Var diff = sub(w0, th);
  const Var inner = scale(hadamard(diff, diff), 0.5);
  const Var gw = t.grad(inner, {w0})[0];
  const Var w1 = sub(w0, scale(gw, 0.5));
  const Var f = scale(hadamard(w1, w1), 0.5);
  const Var g = t.grad(f, {th})[0];
  EXPECT_DOUBLE_EQ(w1.scalar(), 1.0);
  EXPECT_DOUBLE_EQ(g.scalar(), 0.5);
}

TEST(Hypergradient, TauZeroIsTheRoutedDirectTerm) {
  Instance in = small_instance(OptimizerKind::adam, 0.5);
  Rng rng(3);
  const EdgeDistribution dist(oracle::random_symmetric_binary(8, 0.4, rng));
  HypergradConfig cfg;
  cfg.tau = 0;
  Rng r1(99), r2(99);
  const HypergradResult h = truncated_hypergradient(in.problem, {}, in.start, dist, cfg, r1);

  const auto adj = std::make_shared<const SparseMatrix>(sample_adjacency(dist, r2.next_u64()));
  Tape t;
  const Var w1 = t.leaf(in.start.params.w1);
  const Var w2 = t.leaf(in.start.params.w2);
  const Var a = t.sparse_leaf(adj);
  const Var f = outer_loss(GcnVars{w1, w2}, t.constant(in.problem.x), normalize_adjacency(a),
                           in.problem.split);
  const DenseMatrix direct = t.grad(f, {a})[0].value();
  EXPECT_EQ(h.grad_a, direct);
  EXPECT_EQ(h.grad_theta, straight_through_route(direct, dist));
  EXPECT_EQ(h.unrolled_steps, 0u);
}

TEST(Hypergradient, UnrolledAdamMatchesFiniteDifferences) {
  check_unrolled_fd(OptimizerKind::adam, 0.0, 1e-4);
}

TEST(Hypergradient, UnrolledSgdMatchesFiniteDifferences) {
  check_unrolled_fd(OptimizerKind::sgd, 0.0, 1e-4);
}

TEST(Hypergradient, UnrolledWithReplayedDropoutMatchesFiniteDifferences) {
  check_unrolled_fd(OptimizerKind::sgd, 0.5, 1e-4);
}
