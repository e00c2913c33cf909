#pragma once

// Self-check suites run by `lds check`: finite-difference gradient checks,
// exact enumeration oracles and structural invariants on small instances.

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lds/bilevel.hpp"
#include "lds/gcn.hpp"
#include "lds/graphgen.hpp"
#include "lds/runner.hpp"
#include "lds/tape.hpp"

namespace lds::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured error or statistic
  double tolerance = 0.0;  // pass threshold for `value`
  std::string detail;
};

inline std::string format(const CheckResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "[%s] %-34s value %.3e  tol %.1e", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), r.value, r.tolerance);
  std::string s = buf;
  if (!r.detail.empty()) s += "  " + r.detail;
  return s;
}

// ---- oracles -------------------------------------------------------------------

inline DenseMatrix central_difference(const std::function<double(const DenseMatrix&)>& f,
                                      const DenseMatrix& at, double h) {
  DenseMatrix g(at.rows(), at.cols());
  DenseMatrix x = at;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x.data()[k];
    x.data()[k] = orig + h;
    const double fp = f(x);
    x.data()[k] = orig - h;
    const double fm = f(x);
    x.data()[k] = orig;
    g.data()[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const DenseMatrix& a, const DenseMatrix& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a.data()[k] - b.data()[k]) * (a.data()[k] - b.data()[k]);
    den += b.data()[k] * b.data()[k];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

struct SmallInstance {
  std::shared_ptr<const DenseMatrix> x;
  LabeledSplit split;
  GcnParams params;
  DenseMatrix relaxed;  // continuous symmetric adjacency with zero diagonal
};

/// 8 nodes, 4 features, 3 classes, hidden width 6.
inline SmallInstance small_instance(std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix x(8, 4);
  for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
  SmallInstance in;
  in.x = std::make_shared<const DenseMatrix>(std::move(x));
  in.split = LabeledSplit({0, 1, 2, 0, 1, 2, 0, 1}, 3, {0, 1, 2}, {3, 4, 5}, {6}, {7});
  in.params = init_gcn(4, 6, 3, rng);
  in.relaxed = DenseMatrix(8, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = i + 1; j < 8; ++j) in.relaxed(i, j) = in.relaxed(j, i) = rng.uniform(0.1, 0.9);
  return in;
}

// ---- suites --------------------------------------------------------------------

/// Inner-loss gradients for W1, W2 and every entry of the normalized
/// adjacency against central differences, dropout masks held fixed.
inline CheckResult gcn_gradients() {
  const SmallInstance in = small_instance(7);
  const LossConfig cfg{5e-4, 0.5};
  const DropoutMasks masks = make_dropout_masks(8, 4, 6, 0.5, 123);
  const DenseMatrix a_hat = normalize_adjacency(SparseMatrix::from_dense(in.relaxed)).to_dense();
  auto loss = [&](const DenseMatrix& w1, const DenseMatrix& w2, const DenseMatrix& ah) {
    Tape t;
    return inner_loss(GcnVars{t.leaf(w1), t.leaf(w2)}, t.constant(in.x),
                      t.sparse_leaf(SparseMatrix::from_dense(ah)), in.split, cfg, &masks)
        .scalar();
  };
  Tape t;
  const Var w1 = t.leaf(in.params.w1), w2 = t.leaf(in.params.w2);
  const Var ah = t.sparse_leaf(SparseMatrix::from_dense(a_hat));
  const Var l = inner_loss(GcnVars{w1, w2}, t.constant(in.x), ah, in.split, cfg, &masks);
  const auto g = t.grad(l, {w1, w2, ah});
  const double h = 1e-6;
  const double e1 = relative_error(
      g[0].value(), central_difference([&](const DenseMatrix& w) { return loss(w, in.params.w2, a_hat); },
                                       in.params.w1, h));
  const double e2 = relative_error(
      g[1].value(), central_difference([&](const DenseMatrix& w) { return loss(in.params.w1, w, a_hat); },
                                       in.params.w2, h));
  const double e3 = relative_error(
      g[2].value(),
      central_difference([&](const DenseMatrix& a) { return loss(in.params.w1, in.params.w2, a); }, a_hat, h));
  const double e = std::max({e1, e2, e3});
  char buf[96];
  std::snprintf(buf, sizeof buf, "W1 %.1e  W2 %.1e  A_hat %.1e", e1, e2, e3);
  return {"gcn_gradients", e <= 1e-6, e, 1e-6, buf};
}

/// Three-step unrolled hypergradient through Adam against central
/// differences of F through the same replayed dynamics.
inline CheckResult unrolled_hypergradient() {
  const SmallInstance in = small_instance(11);
  const Problem pr(in.x, in.split, LossConfig{5e-4, 0.0}, OptimizerConfig{});
  auto adj = std::make_shared<const SparseMatrix>(SparseMatrix::from_dense(in.relaxed));
  InnerState s0 = InnerState::fresh(in.params);
  for (int k = 0; k < 2; ++k) s0 = inner_step_on(pr, s0, adj, 0, 50 + k).state;
  std::vector<StepRecord> window;
  InnerState cur = s0;
  for (int k = 0; k < 3; ++k) {
    auto r = inner_step_on(pr, cur, adj, 0, 60 + k);
    window.push_back(r.record);
    cur = r.state;
  }
  const std::vector<std::shared_ptr<const SparseMatrix>> back(3, adj);
  const DenseMatrix g = unrolled_adjacency_gradient(pr, window, back, cur, adj, true);
  std::vector<int> labels(8, 0);
  for (std::size_t v : in.split.val_a()) labels[v] = in.split.label(v);
  auto outer = [&](const DenseMatrix& a) {
    auto ap = std::make_shared<const SparseMatrix>(SparseMatrix::from_dense(a));
    InnerState s = s0;
    for (int k = 0; k < 3; ++k) s = inner_step_on(pr, s, ap, 0, 60 + k).state;
    return cross_entropy_value(gcn_logits(s.params, *pr.x, normalize_adjacency(*ap)), labels, in.split.val_a());
  };
  const double e = relative_error(g, central_difference(outer, in.relaxed, 1e-5));
  return {"unrolled_hypergradient", e <= 1e-4, e, 1e-4, "tau 3, Adam, replayed graphs"};
}

/// h(z) = (a z - b)^2 / 2 with z ~ Ber(theta): the straight-through estimate
/// averaged over both outcomes against theta a^2 - a b, and the exact
/// derivative h(1) - h(0) against a^2 / 2 - a b.
inline CheckResult straight_through_bias() {
  const double cases[3][3] = {{1, 0, 0.3}, {2, 1, 0.5}, {3, -1, 0.9}};
  double worst = 0.0;
  bool bias_ok = true;
  for (const auto& c : cases) {
    const double a = c[0], b = c[1], theta = c[2];
    DenseMatrix th(2, 2);
    th(0, 1) = th(1, 0) = theta;
    const EdgeDistribution dist(th);
    double expected_st = 0.0, e_h1 = 0.0, e_h0 = 0.0;
    for (int z = 0; z <= 1; ++z) {
      DenseMatrix am(2, 2);
      am(0, 1) = am(1, 0) = z;
      Tape t;
      const Var av = t.leaf(am);
      const DenseMatrix pick = [] {
        DenseMatrix p(2, 2);
        p(0, 1) = 1.0;
        return p;
      }();
      const Var zv = frobenius_dot(av, t.constant(pick));
      const Var r = add_scalar(scale(zv, a), -b);
      const Var hv = scale(hadamard(r, r), 0.5);
      const DenseMatrix ga = t.grad(hv, {av})[0].value();
      const double g = straight_through_route(ga, dist)(0, 1);
      expected_st += (z ? theta : 1.0 - theta) * g;
      (z ? e_h1 : e_h0) = hv.scalar();
    }
    worst = std::max(worst, std::abs(expected_st - (theta * a * a - a * b)));
    worst = std::max(worst, std::abs((e_h1 - e_h0) - (a * a / 2.0 - a * b)));
    const double bias = expected_st - (e_h1 - e_h0);
    bias_ok = bias_ok && ((std::abs(bias) <= 1e-15) == (theta == 0.5));
  }
  return {"straight_through_bias", worst <= 1e-14 && bias_ok, worst, 1e-14,
          bias_ok ? "bias zero only at theta 0.5" : "bias pattern wrong"};
}

/// Exact expectation over the 8 graphs of a 3-node symmetric distribution
/// against the empirical mean of `samples` draws, in standard errors.
inline CheckResult expectation_oracle(std::size_t samples = 100000) {
  Rng rng(5);
  DenseMatrix x(3, 2);
  for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
  const GcnParams p = init_gcn(2, 4, 2, rng);
  DenseMatrix th(3, 3);
  th(0, 1) = th(1, 0) = 0.2;
  th(0, 2) = th(2, 0) = 0.7;
  th(1, 2) = th(2, 1) = 0.5;
  const EdgeDistribution dist(th);
  const std::size_t pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  DenseMatrix mean(3, 2), second(3, 2);
  for (int mask = 0; mask < 8; ++mask) {
    DenseMatrix a(3, 3);
    double prob = 1.0;
    for (int e = 0; e < 3; ++e) {
      const bool on = (mask >> e) & 1;
      const double q = th(pairs[e][0], pairs[e][1]);
      prob *= on ? q : 1.0 - q;
      if (on) a(pairs[e][0], pairs[e][1]) = a(pairs[e][1], pairs[e][0]) = 1.0;
    }
    const DenseMatrix f = forward(p, x, normalize_adjacency(SparseMatrix::from_dense(a)));
    for (std::size_t k = 0; k < f.size(); ++k) {
      mean.data()[k] += prob * f.data()[k];
      second.data()[k] += prob * f.data()[k] * f.data()[k];
    }
  }
  Rng draw(17);
  const DenseMatrix mc = predict_empirical(p, x, dist, samples, draw);
  double worst = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    const double var = std::max(second.data()[k] - mean.data()[k] * mean.data()[k], 0.0);
    const double se = std::sqrt(var / static_cast<double>(samples));
    worst = std::max(worst, std::abs(mc.data()[k] - mean.data()[k]) / std::max(se, 1e-300));
  }
  return {"expectation_oracle", worst <= 3.0, worst, 3.0, "max |MC - exact| in standard errors"};
}

/// Softmax rows, projection idempotence, bit-identical replay, theta in
/// [0,1] through a short run, and identical results for a repeated seed.
inline CheckResult structural_invariants() {
  Rng rng(21);
  const std::size_t n = 30;
  DenseMatrix x(n, 3);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 3);
    for (std::size_t k = 0; k < 3; ++k) x(i, k) = rng.uniform(-1.0, 1.0) + (k == i % 3 ? 1.0 : 0.0);
  }
  LabeledSplit split(labels, 3, {0, 1, 2, 3, 4, 5}, {6, 7, 8, 9, 10, 11}, {12, 13, 14, 15, 16, 17},
                     {18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29});
  const Problem pr(std::make_shared<const DenseMatrix>(x), split, LossConfig{}, OptimizerConfig{});
  const SparseMatrix knn = knn_graph(x, 4, Metric::euclidean);
  std::vector<std::string> failed;

  const DenseMatrix probs = forward(init_gcn(3, 8, 3, rng), x, normalize_adjacency(knn));
  double worst_row = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double s = 0.0;
    for (double v : probs.row(i)) s += v;
    worst_row = std::max(worst_row, std::abs(s - 1.0));
  }
  if (worst_row > 1e-12) failed.push_back("softmax rows");

  DenseMatrix raw(n, n);
  for (double& v : raw.values()) v = rng.uniform(-0.5, 1.5);
  const DenseMatrix once = project_hypercube(raw, true, true);
  if (project_hypercube(once, true, true) != once) failed.push_back("projection idempotence");

  const EdgeDistribution dist = EdgeDistribution::deterministic(knn);
  InnerState st = InnerState::fresh(init_gcn(3, 8, 3, rng));
  Rng steps(3);
  for (int k = 0; k < 5; ++k) {
    auto r = inner_step(pr, st, dist, steps);
    if (!(replay_step(pr, r.record) == r.state)) {
      failed.push_back("replay bit identity");
      break;
    }
    st = r.state;
  }

  LdsConfig cfg;
  cfg.max_outer_loops = 2;
  cfg.hidden = 8;
  bool in_box = true;
  cfg.on_outer_update = [&](const EdgeDistribution& d) {
    for (double v : d.theta().values()) in_box = in_box && v >= 0.0 && v <= 1.0;
  };
  const LdsResult r1 = run_lds(pr, knn, cfg, 9);
  cfg.on_outer_update = nullptr;
  const LdsResult r2 = run_lds(pr, knn, cfg, 9);
  if (!in_box || r1.outer_updates == 0) failed.push_back("theta in [0,1]");
  bool same = r1.test_acc == r2.test_acc && r1.dist.theta() == r2.dist.theta() &&
              r1.trace.size() == r2.trace.size();
  for (std::size_t i = 0; same && i < r1.trace.size(); ++i)
    same = r1.trace[i].outer_loss == r2.trace[i].outer_loss && r1.trace[i].acc_b == r2.trace[i].acc_b;
  if (!same) failed.push_back("seeded reproducibility");

  std::string detail;
  for (const auto& f : failed) detail += (detail.empty() ? "failed: " : ", ") + f;
  return {"structural_invariants", failed.empty(), static_cast<double>(failed.size()), 0.0, detail};
}

inline std::vector<CheckResult> run_all() {
  return {gcn_gradients(), unrolled_hypergradient(), straight_through_bias(), expectation_oracle(),
          structural_invariants()};
}

}  // namespace lds::checks
