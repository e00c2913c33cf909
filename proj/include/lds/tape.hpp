#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// Every primitive records a node whose backward rule is written in terms of
// other primitives, and grad() appends those backward nodes to the same tape.
// Gradients are therefore ordinary tape nodes and can be differentiated again
// (reverse over reverse), which is what the unrolled hypergradient needs.
//
// Sparse nodes hold a SparseMatrix value, but their adjoint is a dense matrix
// over all entries: the derivative with respect to an absent entry is as
// meaningful as for a stored one.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lds/dense_matrix.hpp"
#include "lds/error.hpp"
#include "lds/sparse_matrix.hpp"

namespace lds {

enum class OpKind : std::uint8_t {
  leaf,
  sparse_leaf,
  matmul,
  transpose,
  spmm,
  add,
  sub,
  mul,
  div,
  scale,
  add_scalar,
  relu,
  log,
  exp,
  sqrt,
  recip,
  clamp01,
  sum,
  row_sum,
  broadcast_cols,
  broadcast_scalar,
  row_softmax,
  row_log_softmax,
  sparse_transpose,
  normalize_adjacency,
  normalize_adjacency_vjp,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::sparse_leaf: return "sparse_leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::spmm: return "spmm";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::relu: return "relu";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::sqrt: return "sqrt";
    case OpKind::recip: return "recip";
    case OpKind::clamp01: return "clamp01";
    case OpKind::sum: return "sum";
    case OpKind::row_sum: return "row_sum";
    case OpKind::broadcast_cols: return "broadcast_cols";
    case OpKind::broadcast_scalar: return "broadcast_scalar";
    case OpKind::row_softmax: return "row_softmax";
    case OpKind::row_log_softmax: return "row_log_softmax";
    case OpKind::sparse_transpose: return "sparse_transpose";
    case OpKind::normalize_adjacency: return "normalize_adjacency";
    case OpKind::normalize_adjacency_vjp: return "normalize_adjacency_vjp";
  }
  return "?";
}

struct TapeNode {
  OpKind kind = OpKind::leaf;
  std::size_t in0 = 0;
  std::size_t in1 = 0;
  std::uint8_t arity = 0;
  double scalar = 0.0;    // scale / add_scalar coefficient
  std::size_t count = 0;  // broadcast width or height
  std::size_t count2 = 0;
  std::shared_ptr<const DenseMatrix> dense;
  std::shared_ptr<const SparseMatrix> sparse;

  bool is_sparse() const noexcept { return sparse != nullptr; }
  std::size_t rows() const noexcept { return sparse ? sparse->rows() : dense->rows(); }
  std::size_t cols() const noexcept { return sparse ? sparse->cols() : dense->cols(); }
};

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  inline const DenseMatrix& value() const;
  inline const SparseMatrix& sparse_value() const;
  inline bool is_sparse() const;
  inline std::size_t rows() const;
  inline std::size_t cols() const;
  /// Value of a 1x1 node.
  inline double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(DenseMatrix value) {
    return leaf(std::make_shared<const DenseMatrix>(std::move(value)));
  }
  Var leaf(std::shared_ptr<const DenseMatrix> value) {
    TapeNode n;
    n.kind = OpKind::leaf;
    n.dense = std::move(value);
    return push(std::move(n));
  }
  /// A leaf that is never requested in grad() is a constant.
  Var constant(DenseMatrix value) { return leaf(std::move(value)); }
  Var constant(std::shared_ptr<const DenseMatrix> value) { return leaf(std::move(value)); }

  Var sparse_leaf(SparseMatrix value) {
    return sparse_leaf(std::make_shared<const SparseMatrix>(std::move(value)));
  }
  Var sparse_leaf(std::shared_ptr<const SparseMatrix> value) {
    TapeNode n;
    n.kind = OpKind::sparse_leaf;
    n.sparse = std::move(value);
    return push(std::move(n));
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }

  Var push(TapeNode n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// d output / d wrt_k for each k. The backward pass is recorded on this
  /// tape, so the returned Vars are differentiable. A wrt node the output does
  /// not depend on receives zeros. Adjoints of sparse nodes are dense.
  inline std::vector<Var> grad(Var output, std::span<const Var> wrt);
  std::vector<Var> grad(Var output, std::initializer_list<Var> wrt) {
    std::vector<Var> w(wrt);
    return grad(output, std::span<const Var>(w));
  }

  /// Number of nodes visited by the most recent grad() call.
  std::size_t last_reverse_visits() const noexcept { return last_visits_; }

 private:
  inline void backprop_node(std::size_t id, Var g, const std::vector<bool>& depends,
                            const std::vector<bool>& requested,
                            std::vector<std::optional<Var>>& adjoint);

  std::vector<TapeNode> nodes_;
  std::size_t last_visits_ = 0;
};

inline const DenseMatrix& Var::value() const {
  const auto& n = tape_->node(id_);
  if (!n.dense) throw ShapeError("Var::value: node is sparse");
  return *n.dense;
}
inline const SparseMatrix& Var::sparse_value() const {
  const auto& n = tape_->node(id_);
  if (!n.sparse) throw ShapeError("Var::sparse_value: node is dense");
  return *n.sparse;
}
inline bool Var::is_sparse() const { return tape_->node(id_).is_sparse(); }
inline std::size_t Var::rows() const { return tape_->node(id_).rows(); }
inline std::size_t Var::cols() const { return tape_->node(id_).cols(); }
inline double Var::scalar() const {
  const auto& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("Var::scalar: node is " + v.shape_string());
  return v(0, 0);
}

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || a.tape() != b.tape())
    throw ShapeError(std::string(op) + ": operands live on different tapes");
  return *a.tape();
}

inline Var record(Tape& t, OpKind k, DenseMatrix value, std::size_t in0, std::size_t in1,
                  std::uint8_t arity, double scalar = 0.0, std::size_t count = 0) {
  TapeNode n;
  n.kind = k;
  n.in0 = in0;
  n.in1 = in1;
  n.arity = arity;
  n.scalar = scalar;
  n.count = count;
  n.dense = std::make_shared<const DenseMatrix>(std::move(value));
  return t.push(std::move(n));
}

inline Var unary(OpKind k, const Var& a, DenseMatrix value, double scalar = 0.0,
                 std::size_t count = 0) {
  return record(*a.tape(), k, std::move(value), a.id(), 0, 1, scalar, count);
}

inline Var binary(OpKind k, const Var& a, const Var& b, DenseMatrix value, const char* op) {
  return record(same_tape(a, b, op), k, std::move(value), a.id(), b.id(), 2);
}

inline const DenseMatrix& dense_of(const Var& v, const char* op) {
  if (v.is_sparse()) throw ShapeError(std::string(op) + ": expected a dense operand");
  return v.value();
}

/// Â = D^{-1/2} (A + I) D^{-1/2} with D_ii = 1 + sum_j A_ij.
inline SparseMatrix normalized_adjacency(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("normalize_adjacency: matrix is not square");
  const std::size_t n = a.rows();
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k) d += a.values()[k];
    if (!(d > 0.0)) throw DomainError("normalize_adjacency: non-positive degree at row " + std::to_string(i));
    r[i] = 1.0 / std::sqrt(d);
  }
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  cols.reserve(a.nnz() + n);
  vals.reserve(a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = false;
    for (std::size_t k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k) {
      const std::size_t j = a.col_indices()[k];
      if (!diag_done && j >= i) {
        if (j == i) {
          cols.push_back(i);
          vals.push_back((a.values()[k] + 1.0) * r[i] * r[i]);
          diag_done = true;
          continue;
        }
        cols.push_back(i);
        vals.push_back(r[i] * r[i]);
        diag_done = true;
      }
      cols.push_back(j);
      vals.push_back(a.values()[k] * r[i] * r[j]);
    }
    if (!diag_done) {
      cols.push_back(i);
      vals.push_back(r[i] * r[i]);
    }
    offsets[i + 1] = cols.size();
  }
  return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::move(vals));
}

/// Pullback of a dense adjoint G on Â to a dense adjoint on A:
///   dA_kl = G_kl r_k r_l + c_k,  c_k = -r_k^2/2 (sum_j G_kj Â_kj + sum_i G_ik Â_ik).
inline DenseMatrix normalized_adjacency_vjp(const DenseMatrix& g, const SparseMatrix& a) {
  const std::size_t n = a.rows();
  if (g.rows() != n || g.cols() != n)
    throw ShapeError("normalize_adjacency_vjp: adjoint is " + g.shape_string());
  const SparseMatrix ahat = normalized_adjacency(a);
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k) d += a.values()[k];
    r[i] = 1.0 / std::sqrt(d);
  }
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = ahat.row_offsets()[i]; k < ahat.row_offsets()[i + 1]; ++k) {
      const std::size_t j = ahat.col_indices()[k];
      const double v = ahat.values()[k];
      c[i] += g(i, j) * v;
      c[j] += g(i, j) * v;
    }
  }
  for (std::size_t i = 0; i < n; ++i) c[i] *= -0.5 * r[i] * r[i];
  DenseMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* gi = g.data() + i * n;
    double* oi = out.data() + i * n;
    const double ri = r[i];
    const double ci = c[i];
    for (std::size_t j = 0; j < n; ++j) oi[j] = gi[j] * ri * r[j] + ci;
  }
  return out;
}

}  // namespace detail

// ---- primitives -------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  return detail::binary(OpKind::matmul, a, b,
                        matmul(detail::dense_of(a, "matmul"), detail::dense_of(b, "matmul")),
                        "matmul");
}

inline Var transpose(const Var& a) {
  return detail::unary(OpKind::transpose, a, transpose(detail::dense_of(a, "transpose")));
}

inline Var spmm(const Var& s, const Var& b) {
  if (!s.is_sparse()) throw ShapeError("spmm: left operand must be sparse");
  return detail::binary(OpKind::spmm, s, b, spmm(s.sparse_value(), detail::dense_of(b, "spmm")),
                        "spmm");
}

inline Var add(const Var& a, const Var& b) {
  return detail::binary(OpKind::add, a, b, add(a.value(), b.value()), "add");
}
inline Var sub(const Var& a, const Var& b) {
  return detail::binary(OpKind::sub, a, b, sub(a.value(), b.value()), "sub");
}
inline Var hadamard(const Var& a, const Var& b) {
  return detail::binary(OpKind::mul, a, b, hadamard(a.value(), b.value()), "mul");
}
inline Var divide(const Var& a, const Var& b) {
  return detail::binary(OpKind::div, a, b, divide(a.value(), b.value()), "div");
}
inline Var scale(const Var& a, double c) {
  return detail::unary(OpKind::scale, a, scale(a.value(), c), c);
}
inline Var add_scalar(const Var& a, double c) {
  return detail::unary(OpKind::add_scalar, a, add_scalar(a.value(), c), c);
}
inline Var relu(const Var& a) { return detail::unary(OpKind::relu, a, relu(a.value())); }
inline Var log(const Var& a) { return detail::unary(OpKind::log, a, log(a.value())); }
inline Var exp(const Var& a) { return detail::unary(OpKind::exp, a, exp(a.value())); }
inline Var sqrt(const Var& a) { return detail::unary(OpKind::sqrt, a, sqrt(a.value())); }
inline Var recip(const Var& a) { return detail::unary(OpKind::recip, a, recip(a.value())); }
inline Var clamp01(const Var& a) { return detail::unary(OpKind::clamp01, a, clamp01(a.value())); }

inline Var sum(const Var& a) {
  return detail::unary(OpKind::sum, a, DenseMatrix(1, 1, sum(a.value())));
}
inline Var row_sum(const Var& a) { return detail::unary(OpKind::row_sum, a, row_sum(a.value())); }
inline Var broadcast_cols(const Var& v, std::size_t cols) {
  return detail::unary(OpKind::broadcast_cols, v, broadcast_cols(v.value(), cols), 0.0, cols);
}
inline Var broadcast_scalar(const Var& s, std::size_t rows, std::size_t cols) {
  const double x = s.scalar();
  Var out = detail::unary(OpKind::broadcast_scalar, s, broadcast_scalar(x, rows, cols), 0.0, rows);
  return out;
}
inline Var row_softmax(const Var& a) {
  return detail::unary(OpKind::row_softmax, a, row_softmax(a.value()));
}
inline Var row_log_softmax(const Var& a) {
  return detail::unary(OpKind::row_log_softmax, a, row_log_softmax(a.value()));
}

inline Var sparse_transpose(const Var& s) {
  if (!s.is_sparse()) throw ShapeError("sparse_transpose: operand must be sparse");
  TapeNode n;
  n.kind = OpKind::sparse_transpose;
  n.in0 = s.id();
  n.arity = 1;
  n.sparse = std::make_shared<const SparseMatrix>(s.sparse_value().transposed());
  return s.tape()->push(std::move(n));
}

/// Self-loop augmented, symmetrically degree-normalized adjacency.
inline Var normalize_adjacency(const Var& a) {
  if (!a.is_sparse()) throw ShapeError("normalize_adjacency: operand must be sparse");
  TapeNode n;
  n.kind = OpKind::normalize_adjacency;
  n.in0 = a.id();
  n.arity = 1;
  n.sparse = std::make_shared<const SparseMatrix>(detail::normalized_adjacency(a.sparse_value()));
  return a.tape()->push(std::move(n));
}

/// First-order only: its own backward is not defined.
inline Var normalize_adjacency_vjp(const Var& g, const Var& a) {
  return detail::binary(OpKind::normalize_adjacency_vjp, g, a,
                        detail::normalized_adjacency_vjp(g.value(), a.sparse_value()),
                        "normalize_adjacency_vjp");
}

inline Var frobenius_dot(const Var& a, const Var& b) { return sum(hadamard(a, b)); }

// ---- reverse pass -----------------------------------------------------------

inline std::vector<Var> Tape::grad(Var output, std::span<const Var> wrt) {
  if (output.tape() != this) throw ShapeError("grad: output is not on this tape");
  const auto& out_node = nodes_.at(output.id());
  if (out_node.is_sparse() || out_node.rows() != 1 || out_node.cols() != 1)
    throw ShapeError("grad: output must be a 1x1 scalar node");
  for (const Var& w : wrt)
    if (w.tape() != this || w.id() >= nodes_.size())
      throw ShapeError("grad: requested node is not on this tape");

  const std::size_t end = output.id() + 1;
  std::vector<bool> depends(end, false);
  for (const Var& w : wrt)
    if (w.id() < end) depends[w.id()] = true;
  const std::vector<bool> requested = depends;
  for (std::size_t i = 0; i < end; ++i) {
    if (depends[i]) continue;
    const auto& n = nodes_[i];
    if (n.arity >= 1 && depends[n.in0]) depends[i] = true;
    if (n.arity >= 2 && depends[n.in1]) depends[i] = true;
  }

  std::vector<std::optional<Var>> adjoint(end);
  adjoint[output.id()] = constant(DenseMatrix(1, 1, 1.0));
  last_visits_ = 0;
  for (std::size_t i = end; i-- > 0;) {
    if (!depends[i] || !adjoint[i]) continue;
    ++last_visits_;
    if (nodes_[i].kind == OpKind::leaf || nodes_[i].kind == OpKind::sparse_leaf) continue;
    backprop_node(i, *adjoint[i], depends, requested, adjoint);
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < end && adjoint[w.id()]) {
      out.push_back(*adjoint[w.id()]);
    } else {
      const auto& n = nodes_[w.id()];
      out.push_back(constant(DenseMatrix(n.rows(), n.cols())));
    }
  }
  return out;
}

inline void Tape::backprop_node(std::size_t id, Var g, const std::vector<bool>& depends,
                                const std::vector<bool>& requested,
                                std::vector<std::optional<Var>>& adjoint) {
  // Copy what we need: pushing new nodes may reallocate nodes_.
  const OpKind kind = nodes_[id].kind;
  const std::size_t i0 = nodes_[id].in0;
  const std::size_t i1 = nodes_[id].in1;
  const std::uint8_t arity = nodes_[id].arity;
  const double c = nodes_[id].scalar;
  const Var y(this, id);
  const Var a(this, i0);
  const Var b(this, i1);
  const bool need0 = arity >= 1 && depends[i0];
  const bool need1 = arity >= 2 && depends[i1];

  auto accumulate = [&](std::size_t target, Var contribution) {
    if (adjoint[target]) {
      adjoint[target] = add(*adjoint[target], contribution);
    } else {
      adjoint[target] = contribution;
    }
  };

  switch (kind) {
    case OpKind::leaf:
    case OpKind::sparse_leaf:
      return;
    case OpKind::matmul:
      if (need0) accumulate(i0, matmul(g, transpose(b)));
      if (need1) accumulate(i1, matmul(transpose(a), g));
      return;
    case OpKind::transpose:
      if (need0) accumulate(i0, transpose(g));
      return;
    case OpKind::spmm:
      if (need0) {
        // For spmm(S^T, B) send B g^T straight to S instead of transposing
        // the dense N x N adjoint of S^T, unless S^T itself was requested.
        const TapeNode& s = nodes_[i0];
        if (s.kind == OpKind::sparse_transpose && !requested[i0] && depends[s.in0]) {
          const std::size_t src = s.in0;
          accumulate(src, matmul(b, transpose(g)));
        } else {
          accumulate(i0, matmul(g, transpose(b)));
        }
      }
      if (need1) accumulate(i1, spmm(sparse_transpose(a), g));
      return;
    case OpKind::add:
      if (need0) accumulate(i0, g);
      if (need1) accumulate(i1, g);
      return;
    case OpKind::sub:
      if (need0) accumulate(i0, g);
      if (need1) accumulate(i1, scale(g, -1.0));
      return;
    case OpKind::mul:
      if (need0) accumulate(i0, hadamard(g, b));
      if (need1) accumulate(i1, hadamard(g, a));
      return;
    case OpKind::div:
      if (need0) accumulate(i0, divide(g, b));
      if (need1) accumulate(i1, scale(divide(hadamard(g, y), b), -1.0));
      return;
    case OpKind::scale:
      if (need0) accumulate(i0, scale(g, c));
      return;
    case OpKind::add_scalar:
      if (need0) accumulate(i0, g);
      return;
    case OpKind::relu:
      if (need0) accumulate(i0, hadamard(g, constant(step(a.value()))));
      return;
    case OpKind::log:
      if (need0) accumulate(i0, divide(g, a));
      return;
    case OpKind::exp:
      if (need0) accumulate(i0, hadamard(g, y));
      return;
    case OpKind::sqrt:
      if (need0) accumulate(i0, scale(hadamard(g, recip(y)), 0.5));
      return;
    case OpKind::recip:
      if (need0) accumulate(i0, scale(hadamard(g, hadamard(y, y)), -1.0));
      return;
    case OpKind::clamp01:
      if (need0) accumulate(i0, hadamard(g, constant(interior01(a.value()))));
      return;
    case OpKind::sum:
      if (need0) accumulate(i0, broadcast_scalar(g, a.rows(), a.cols()));
      return;
    case OpKind::row_sum:
      if (need0) accumulate(i0, broadcast_cols(g, a.cols()));
      return;
    case OpKind::broadcast_cols:
      if (need0) accumulate(i0, row_sum(g));
      return;
    case OpKind::broadcast_scalar:
      if (need0) accumulate(i0, sum(g));
      return;
    case OpKind::row_softmax:
      if (need0) {
        const Var inner = broadcast_cols(row_sum(hadamard(g, y)), y.cols());
        accumulate(i0, hadamard(y, sub(g, inner)));
      }
      return;
    case OpKind::row_log_softmax:
      if (need0) {
        const Var probs = exp(y);
        accumulate(i0, sub(g, hadamard(probs, broadcast_cols(row_sum(g), y.cols()))));
      }
      return;
    case OpKind::sparse_transpose:
      if (need0) accumulate(i0, transpose(g));
      return;
    case OpKind::normalize_adjacency:
      if (need0) accumulate(i0, normalize_adjacency_vjp(g, a));
      return;
    case OpKind::normalize_adjacency_vjp:
      throw Error("grad: normalize_adjacency_vjp is first-order only");
  }
}

}  // namespace lds
