#pragma once

// Joint learning of edge probabilities theta and GCN weights w.
//
// The inner problem is solved by the optimizer dynamics of dynamics.hpp on
// graphs sampled from theta. Every tau inner steps the outer objective is
// differentiated through the last window of steps by a reverse sweep that
// carries the adjoint p over the full optimizer state:
//
//   G = dF/dA(w_t, A_t);  p = dF/dw(w_t, A_t)
//   for s = t-1 down to t-tau:  G += p E_s;  p = p D_s
//
// where D_s, E_s are the Jacobians of the update map with respect to the state
// and the adjacency. Both products come out of one vector-Jacobian product
// of <p, Phi(state_s, A_s)> on a tape that already holds grad L. The
// adjacency gradient is routed to theta with the straight-through rule.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lds/dense_matrix.hpp"
#include "lds/dynamics.hpp"
#include "lds/error.hpp"
#include "lds/gcn.hpp"
#include "lds/graphgen.hpp"
#include "lds/rng.hpp"
#include "lds/sparse_matrix.hpp"
#include "lds/tape.hpp"

namespace lds {

struct HypergradConfig {
  std::size_t tau = 5;  // 0 = alternating minimization
  double eta = 1.0;
  double eta_decay = 0.99;
  bool resample_backward = true;
  std::size_t s_samples = 16;
  // Differentiate F through Â(A). When false the gradient with respect to Â
  // is used in place of the gradient with respect to A.
  bool through_normalization = true;

  void validate() const {
    if (!(eta > 0.0)) throw ConfigError("eta must be positive");
    if (!(eta_decay > 0.0 && eta_decay <= 1.0)) throw ConfigError("eta_decay must lie in (0,1]");
    if (s_samples == 0) throw ConfigError("s_samples must be at least 1");
  }
};

/// Everything the inner and outer losses need besides the weights and graph.
struct Problem {
  std::shared_ptr<const DenseMatrix> x;
  LabeledSplit split;
  DenseMatrix y_train;  // one-hot rows on the training nodes
  DenseMatrix y_val_a;  // one-hot rows on validation (A)
  LossConfig loss;
  OptimizerConfig opt;

  Problem() = default;
  Problem(std::shared_ptr<const DenseMatrix> features, LabeledSplit s, LossConfig l,
          OptimizerConfig o)
      : x(std::move(features)), split(std::move(s)), loss(l), opt(o) {
    if (!x || x->rows() != split.n_nodes())
      throw ShapeError("Problem: feature rows do not match the number of labels");
    if (split.train().empty()) throw ShapeError("Problem: empty training mask");
    loss.validate();
    opt.validate();
    y_train = split.targets(MaskKind::train);
    y_val_a = split.targets(MaskKind::val_a);
  }

  std::size_t n_nodes() const { return x->rows(); }
};

/// One recorded inner step: the state it started from, the graph it used
/// and the seeds that regenerate the graph and the dropout masks.
struct StepRecord {
  InnerState before;
  std::shared_ptr<const SparseMatrix> adjacency;
  std::uint64_t sample_seed = 0;
  std::uint64_t mask_seed = 0;
};

struct InnerStepResult {
  InnerState state;
  StepRecord record;
  double loss = 0.0;
};

namespace detail {

inline std::optional<DropoutMasks> masks_for(const Problem& pr, std::size_t hidden,
                                             std::uint64_t mask_seed) {
  if (pr.loss.dropout_beta <= 0.0) return std::nullopt;
  return make_dropout_masks(pr.n_nodes(), pr.x->cols(), hidden, pr.loss.dropout_beta, mask_seed);
}

inline StateOf<Var> leaves(Tape& t, const InnerState& s) {
  return {t.leaf(s.params.w1), t.leaf(s.params.w2), t.leaf(s.m1),
          t.leaf(s.m2),        t.leaf(s.v1),        t.leaf(s.v2)};
}

/// Records Phi(state, A) on `t`; returns the new state and the inner loss.
inline std::pair<StateOf<Var>, Var> taped_step(Tape& t, const Problem& pr, const StateOf<Var>& s,
                                               const Var& a_hat, const DropoutMasks* masks,
                                               std::size_t step_index) {
  const Var x = t.constant(pr.x);
  const Var loss = inner_loss(GcnVars{s.w1, s.w2}, x, a_hat, pr.y_train, pr.loss, masks);
  const std::vector<Var> g = t.grad(loss, {s.w1, s.w2});
  return {optimizer_update<Var>(pr.opt, s, g[0], g[1], step_index), loss};
}

inline InnerState state_from(const StateOf<Var>& v, std::size_t step) {
  InnerState s;
  s.params.w1 = v.w1.value();
  s.params.w2 = v.w2.value();
  s.m1 = v.m1.value();
  s.m2 = v.m2.value();
  s.v1 = v.v1.value();
  s.v2 = v.v2.value();
  s.step = step;
  return s;
}

}  // namespace detail

/// Applies one update of the inner dynamics on a given adjacency.
inline InnerStepResult inner_step_on(const Problem& pr, const InnerState& state,
                                     std::shared_ptr<const SparseMatrix> adjacency,
                                     std::uint64_t sample_seed, std::uint64_t mask_seed) {
  const auto masks = detail::masks_for(pr, state.params.hidden(), mask_seed);
  Tape t;
  const StateOf<Var> s = detail::leaves(t, state);
  const Var a_hat = normalize_adjacency(t.sparse_leaf(adjacency));
  auto [next, loss] = detail::taped_step(t, pr, s, a_hat, masks ? &*masks : nullptr, state.step + 1);
  InnerStepResult r;
  r.loss = loss.scalar();
  if (!std::isfinite(r.loss))
    throw DivergenceError("inner loss is not finite at inner step " + std::to_string(state.step + 1));
  r.state = detail::state_from(next, state.step + 1);
  r.record = StepRecord{state, std::move(adjacency), sample_seed, mask_seed};
  return r;
}

/// One inner step: draws A ~ Ber(theta) and dropout masks, updates the state.
inline InnerStepResult inner_step(const Problem& pr, const InnerState& state,
                                  const EdgeDistribution& dist, Rng& rng) {
  const std::uint64_t sample_seed = rng.next_u64();
  const std::uint64_t mask_seed = rng.next_u64();
  auto adj = std::make_shared<const SparseMatrix>(sample_adjacency(dist, sample_seed));
  return inner_step_on(pr, state, std::move(adj), sample_seed, mask_seed);
}

/// Re-executes a recorded step from its record alone.
inline InnerState replay_step(const Problem& pr, const StepRecord& rec) {
  return inner_step_on(pr, rec.before, rec.adjacency, rec.sample_seed, rec.mask_seed).state;
}

struct HypergradResult {
  DenseMatrix grad_a;      // raw adjoint on the adjacency entries
  DenseMatrix grad_theta;  // after straight-through routing
  double outer_loss = 0.0;
  std::size_t unrolled_steps = 0;
};

/// Reverse sweep over an explicit window. `backward_adjacency[s]` is the graph
/// used for the Jacobians of step s (the forward graph in replay mode, a
/// fresh draw otherwise); `outer_adjacency` is the graph of the direct term.
/// The result is the raw gradient with respect to the adjacency entries.
inline DenseMatrix unrolled_adjacency_gradient(
    const Problem& pr, std::span<const StepRecord> window,
    std::span<const std::shared_ptr<const SparseMatrix>> backward_adjacency,
    const InnerState& final_state, std::shared_ptr<const SparseMatrix> outer_adjacency,
    bool through_normalization, double* outer_value = nullptr) {
  if (backward_adjacency.size() != window.size())
    throw ShapeError("hypergradient: one backward adjacency per recorded step is required");
  const std::size_t n = pr.n_nodes();

  auto adjacency_vars = [&](Tape& t, std::shared_ptr<const SparseMatrix> a) -> std::pair<Var, Var> {
    if (a->rows() != n || a->cols() != n) throw ShapeError("hypergradient: adjacency shape");
    if (through_normalization) {
      const Var leaf = t.sparse_leaf(std::move(a));
      return {leaf, normalize_adjacency(leaf)};
    }
    const Var hat = t.sparse_leaf(normalize_adjacency(*a));
    return {hat, hat};
  };

  // Direct term.
  DenseMatrix grad_a;
  std::vector<DenseMatrix> p;
  {
    Tape t;
    const Var w1 = t.leaf(final_state.params.w1);
    const Var w2 = t.leaf(final_state.params.w2);
    auto [wrt_a, a_hat] = adjacency_vars(t, outer_adjacency);
    const Var x = t.constant(pr.x);
    const Var f = cross_entropy(gcn_logits(GcnVars{w1, w2}, x, a_hat, nullptr), pr.y_val_a);
    if (outer_value) *outer_value = f.scalar();
    if (!std::isfinite(f.scalar())) throw DivergenceError("outer loss is not finite");
    const auto g = t.grad(f, {wrt_a, w1, w2});
    grad_a = g[0].value();
    if (!window.empty()) {
      p = {g[1].value(),
           g[2].value(),
           DenseMatrix(final_state.m1.rows(), final_state.m1.cols()),
           DenseMatrix(final_state.m2.rows(), final_state.m2.cols()),
           DenseMatrix(final_state.v1.rows(), final_state.v1.cols()),
           DenseMatrix(final_state.v2.rows(), final_state.v2.cols())};
    }
  }

  for (std::size_t s = window.size(); s-- > 0;) {
    const StepRecord& rec = window[s];
    const auto masks = detail::masks_for(pr, rec.before.params.hidden(), rec.mask_seed);
    Tape t;
    const StateOf<Var> st = detail::leaves(t, rec.before);
    auto [wrt_a, a_hat] = adjacency_vars(t, backward_adjacency[s]);
    const auto next =
        detail::taped_step(t, pr, st, a_hat, masks ? &*masks : nullptr, rec.before.step + 1).first;
    const Var outs[6] = {next.w1, next.w2, next.m1, next.m2, next.v1, next.v2};
    Var j = frobenius_dot(t.constant(p[0]), outs[0]);
    for (int k = 1; k < 6; ++k) j = add(j, frobenius_dot(t.constant(p[k]), outs[k]));
    const auto g = t.grad(j, {wrt_a, st.w1, st.w2, st.m1, st.m2, st.v1, st.v2});
    const DenseMatrix& ge = g[0].value();
    for (std::size_t i = 0; i < grad_a.size(); ++i) grad_a.data()[i] += ge.data()[i];
    for (int k = 0; k < 6; ++k) p[k] = g[static_cast<std::size_t>(k) + 1].value();
  }
  if (!grad_a.all_finite()) throw DivergenceError("hypergradient is not finite");
  return grad_a;
}

/// Truncated hypergradient over `window` (at most tau steps, possibly empty),
/// with the direct term evaluated at `final_state` on a fresh draw.
inline HypergradResult truncated_hypergradient(const Problem& pr, std::span<const StepRecord> window,
                                               const InnerState& final_state,
                                               const EdgeDistribution& dist,
                                               const HypergradConfig& cfg, Rng& rng) {
  for (const auto& r : window)
    if (!r.adjacency) throw Error("hypergradient: step record without replay data");
  const auto outer_adj = std::make_shared<const SparseMatrix>(sample_adjacency(dist, rng.next_u64()));
  std::vector<std::shared_ptr<const SparseMatrix>> back;
  back.reserve(window.size());
  for (const auto& r : window) {
    back.push_back(cfg.resample_backward
                       ? std::make_shared<const SparseMatrix>(sample_adjacency(dist, rng.next_u64()))
                       : r.adjacency);
  }
  HypergradResult out;
  out.grad_a = unrolled_adjacency_gradient(pr, window, back, final_state, outer_adj,
                                           cfg.through_normalization, &out.outer_loss);
  out.grad_theta = straight_through_route(out.grad_a, dist);
  out.unrolled_steps = window.size();
  return out;
}

/// theta <- Proj[theta - eta G].
inline EdgeDistribution outer_update(const EdgeDistribution& dist, const DenseMatrix& g, double eta) {
  if (!g.same_shape(dist.theta()))
    throw ShapeError("outer_update: gradient is " + g.shape_string() + ", theta is " +
                     dist.theta().shape_string());
  if (!g.all_finite()) throw DivergenceError("outer_update: gradient is not finite");
  DenseMatrix t = dist.theta();
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] -= eta * g.data()[i];
  return EdgeDistribution(project_hypercube(t, dist.symmetric(), dist.diag_zero()), dist.symmetric(),
                          dist.diag_zero());
}

// ---- stopping ---------------------------------------------------------------

struct InnerStopping {
  double epsilon = 1e-3;
  std::size_t patience = 20;
  std::size_t max_steps = 400;
};

/// Inner decrease condition: a step counts as progress when it improves the
/// best loss of the epoch by a relative margin epsilon. The epoch ends after
/// `patience` steps without progress.
struct InnerStopState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t steps = 0;

  /// Returns true when the epoch should end.
  bool update(double loss, const InnerStopping& cfg) {
    ++steps;
    if (loss * (1.0 + cfg.epsilon) < best) {
      best = loss;
      since_best = 0;
    } else {
      ++since_best;
    }
    return since_best >= cfg.patience || steps >= cfg.max_steps;
  }
};

}  // namespace lds
