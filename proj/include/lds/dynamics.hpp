#pragma once

// Inner optimization dynamics Phi. The update rule is a template over the
// matrix type so the same arithmetic runs on plain matrices during training
// and on tape variables when a window is differentiated. Both paths call the
// same kernels in the same order, so a replayed step is bit-identical.

#include <cmath>
#include <cstddef>
#include <string>

#include "lds/dense_matrix.hpp"
#include "lds/error.hpp"
#include "lds/gcn.hpp"
#include "lds/tape.hpp"

namespace lds {

enum class OptimizerKind { adam, sgd };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}
inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double gamma = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  }
};

/// Weights plus first and second moment buffers, generic over the matrix type.
template <class M>
struct StateOf {
  M w1, w2, m1, m2, v1, v2;
};

/// The optimizer state between inner steps. `step` counts completed updates.
struct InnerState {
  GcnParams params;
  DenseMatrix m1, m2, v1, v2;
  std::size_t step = 0;

  static InnerState fresh(GcnParams p) {
    InnerState s;
    s.m1 = DenseMatrix(p.w1.rows(), p.w1.cols());
    s.v1 = s.m1;
    s.m2 = DenseMatrix(p.w2.rows(), p.w2.cols());
    s.v2 = s.m2;
    s.params = std::move(p);
    return s;
  }

  StateOf<DenseMatrix> tensors() const { return {params.w1, params.w2, m1, m2, v1, v2}; }
  void assign(StateOf<DenseMatrix> t) {
    params.w1 = std::move(t.w1);
    params.w2 = std::move(t.w2);
    m1 = std::move(t.m1);
    m2 = std::move(t.m2);
    v1 = std::move(t.v1);
    v2 = std::move(t.v2);
  }
  bool all_finite() const {
    return params.all_finite() && m1.all_finite() && m2.all_finite() && v1.all_finite() &&
           v2.all_finite();
  }
  friend bool operator==(const InnerState&, const InnerState&) = default;
};

namespace detail {

template <class M>
void adam_one(const OptimizerConfig& c, double bc1, double bc2, const M& w, const M& m,
              const M& v, const M& g, M& w_out, M& m_out, M& v_out) {
  m_out = add(scale(m, c.beta1), scale(g, 1.0 - c.beta1));
  v_out = add(scale(v, c.beta2), scale(hadamard(g, g), 1.0 - c.beta2));
  const M m_hat = scale(m_out, 1.0 / bc1);
  const M v_hat = scale(v_out, 1.0 / bc2);
  w_out = sub(w, scale(divide(m_hat, add_scalar(sqrt(v_hat), c.epsilon)), c.gamma));
}

}  // namespace detail

/// Phi: one update from gradients (g1, g2). `step` is the 1-based index of
/// this update, used for the Adam bias correction.
template <class M>
StateOf<M> optimizer_update(const OptimizerConfig& c, const StateOf<M>& s, const M& g1, const M& g2,
                            std::size_t step) {
  StateOf<M> out;
  if (c.kind == OptimizerKind::sgd) {
    out.w1 = sub(s.w1, scale(g1, c.gamma));
    out.w2 = sub(s.w2, scale(g2, c.gamma));
    out.m1 = s.m1;
    out.m2 = s.m2;
    out.v1 = s.v1;
    out.v2 = s.v2;
    return out;
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  detail::adam_one(c, bc1, bc2, s.w1, s.m1, s.v1, g1, out.w1, out.m1, out.v1);
  detail::adam_one(c, bc1, bc2, s.w2, s.m2, s.v2, g2, out.w2, out.m2, out.v2);
  return out;
}

}  // namespace lds
