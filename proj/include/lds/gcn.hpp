#pragma once

// Two-layer GCN: softmax(Â relu(Â X W1) W2), its training and validation
// losses, and the sample-mean predictor over a graph distribution.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lds/dense_matrix.hpp"
#include "lds/error.hpp"
#include "lds/graphgen.hpp"
#include "lds/rng.hpp"
#include "lds/sparse_matrix.hpp"
#include "lds/tape.hpp"

namespace lds {

inline constexpr int kUnknownLabel = -1;

struct GcnParams {
  DenseMatrix w1;  // n_features x hidden
  DenseMatrix w2;  // hidden x n_classes

  std::size_t hidden() const noexcept { return w1.cols(); }
  std::size_t n_features() const noexcept { return w1.rows(); }
  std::size_t n_classes() const noexcept { return w2.cols(); }
  bool all_finite() const noexcept { return w1.all_finite() && w2.all_finite(); }
  friend bool operator==(const GcnParams&, const GcnParams&) = default;
};

/// Uniform Glorot initialization, range +-sqrt(6 / (fan_in + fan_out)).
inline DenseMatrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseMatrix w(fan_in, fan_out);
  for (double& v : w.values()) v = rng.uniform(-r, r);
  return w;
}

inline GcnParams init_gcn(std::size_t n_features, std::size_t hidden, std::size_t n_classes,
                          Rng& rng) {
  GcnParams p;
  p.w1 = glorot_uniform(n_features, hidden, rng);
  p.w2 = glorot_uniform(hidden, n_classes, rng);
  return p;
}

struct LossConfig {
  double rho = 5e-4;          // coefficient of |W1|^2
  double dropout_beta = 0.5;  // drop probability

  void validate() const {
    if (!(rho >= 0.0)) throw ConfigError("rho must be nonnegative");
    if (!(dropout_beta >= 0.0 && dropout_beta < 1.0))
      throw ConfigError("dropout_beta must lie in [0,1)");
  }
};

/// Inverted-dropout masks for the input features and the hidden layer:
/// entries are 0 with probability beta and 1/(1-beta) otherwise.
struct DropoutMasks {
  DenseMatrix input;
  DenseMatrix hidden;
};

inline DenseMatrix dropout_mask(std::size_t rows, std::size_t cols, double beta,
                                std::uint64_t seed) {
  DenseMatrix m(rows, cols);
  const double keep = 1.0 / (1.0 - beta);
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data()[i] = uniform_at(seed, i) < beta ? 0.0 : keep;
  return m;
}

/// Masks are a pure function of (shape, beta, seed) so a step can be replayed
/// from its seed alone.
inline DropoutMasks make_dropout_masks(std::size_t n_nodes, std::size_t n_features,
                                       std::size_t hidden, double beta, std::uint64_t seed) {
  DropoutMasks m;
  m.input = dropout_mask(n_nodes, n_features, beta, mix64(seed ^ 0x1));
  m.hidden = dropout_mask(n_nodes, hidden, beta, mix64(seed ^ 0x2));
  return m;
}

enum class MaskKind { train, val_a, val_b, validation, test };

inline const char* mask_name(MaskKind k) {
  switch (k) {
    case MaskKind::train: return "train";
    case MaskKind::val_a: return "val_a";
    case MaskKind::val_b: return "val_b";
    case MaskKind::validation: return "validation";
    case MaskKind::test: return "test";
  }
  return "?";
}

/// Node labels with disjoint train / validation (A) / early-stopping (B) /
/// test masks. Reads of test labels are counted; copies share the counter.
class LabeledSplit {
 public:
  LabeledSplit() = default;
  LabeledSplit(std::vector<int> labels, std::size_t n_classes, std::vector<std::size_t> train,
               std::vector<std::size_t> val_a, std::vector<std::size_t> val_b,
               std::vector<std::size_t> test)
      : labels_(std::move(labels)),
        n_classes_(n_classes),
        train_(std::move(train)),
        val_a_(std::move(val_a)),
        val_b_(std::move(val_b)),
        test_(std::move(test)) {
    validate();
  }

  std::size_t n_nodes() const noexcept { return labels_.size(); }
  std::size_t n_classes() const noexcept { return n_classes_; }
  const std::vector<std::size_t>& train() const noexcept { return train_; }
  const std::vector<std::size_t>& val_a() const noexcept { return val_a_; }
  const std::vector<std::size_t>& val_b() const noexcept { return val_b_; }
  const std::vector<std::size_t>& test() const noexcept { return test_; }

  std::vector<std::size_t> validation() const {
    std::vector<std::size_t> v = val_a_;
    v.insert(v.end(), val_b_.begin(), val_b_.end());
    return v;
  }

  std::vector<std::size_t> nodes(MaskKind k) const {
    switch (k) {
      case MaskKind::train: return train_;
      case MaskKind::val_a: return val_a_;
      case MaskKind::val_b: return val_b_;
      case MaskKind::validation: return validation();
      case MaskKind::test: return test_;
    }
    return {};
  }

  /// Label of a node. Labels of test nodes are only reachable through
  /// read_test_labels(), which is counted.
  int label(std::size_t node) const {
    if (is_test_[node]) throw Error("LabeledSplit: test label requested through label()");
    return labels_[node];
  }
  bool is_test(std::size_t node) const { return is_test_[node]; }
  bool has_known_label(std::size_t node) const {
    return !is_test_[node] && labels_[node] != kUnknownLabel;
  }

  /// Labels of the test nodes, in mask order. Each call counts as one pass
  /// over the test labels.
  std::vector<int> read_test_labels() const {
    ++*test_reads_;
    std::vector<int> out;
    out.reserve(test_.size());
    for (std::size_t v : test_) out.push_back(labels_[v]);
    return out;
  }
  /// Number of passes over the test labels so far (shared by copies).
  std::size_t test_label_passes() const noexcept { return test_reads_->load(); }

  /// One-hot targets for the masked nodes, zero rows elsewhere. Not
  /// available for the test mask.
  DenseMatrix targets(MaskKind k) const {
    if (k == MaskKind::test) throw Error("LabeledSplit: targets() is not available for test");
    DenseMatrix y(labels_.size(), n_classes_);
    for (std::size_t v : nodes(k)) y(v, static_cast<std::size_t>(labels_[v])) = 1.0;
    return y;
  }

 private:
  void validate() {
    is_test_.assign(labels_.size(), false);
    std::vector<int> owner(labels_.size(), -1);
    const std::vector<std::size_t>* masks[] = {&train_, &val_a_, &val_b_, &test_};
    for (int m = 0; m < 4; ++m) {
      for (std::size_t v : *masks[m]) {
        if (v >= labels_.size())
          throw ShapeError("LabeledSplit: node " + std::to_string(v) + " out of range");
        if (owner[v] != -1)
          throw ShapeError("LabeledSplit: node " + std::to_string(v) + " is in two masks");
        owner[v] = m;
        if (labels_[v] < 0 || static_cast<std::size_t>(labels_[v]) >= n_classes_)
          throw ShapeError("LabeledSplit: masked node " + std::to_string(v) + " has no valid label");
      }
    }
    for (std::size_t v : test_) is_test_[v] = true;
  }

  std::vector<int> labels_;
  std::size_t n_classes_ = 0;
  std::vector<std::size_t> train_, val_a_, val_b_, test_;
  std::vector<bool> is_test_;
  std::shared_ptr<std::atomic<std::size_t>> test_reads_ =
      std::make_shared<std::atomic<std::size_t>>(0);
};

// ---- forward on a tape ----------------------------------------------------------

struct GcnVars {
  Var w1;
  Var w2;
};

/// Pre-softmax outputs Â relu(Â (X∘M1) W1)∘M2 W2 recorded on the tape of
/// `a_hat`. `x` must live on the same tape.
inline Var gcn_logits(const GcnVars& w, const Var& x, const Var& a_hat,
                      const DropoutMasks* masks) {
  Tape& t = *a_hat.tape();
  if (x.cols() != w.w1.rows() || w.w1.cols() != w.w2.rows())
    throw ShapeError("gcn: shape chain broken (features " + std::to_string(x.cols()) + ", W1 " +
                     w.w1.value().shape_string() + ", W2 " + w.w2.value().shape_string() + ")");
  if (a_hat.rows() != x.rows() || a_hat.cols() != x.rows())
    throw ShapeError("gcn: adjacency does not match the number of nodes");
  Var xin = x;
  if (masks) xin = hadamard(x, t.constant(masks->input));
  Var h = relu(spmm(a_hat, matmul(xin, w.w1)));
  if (masks) h = hadamard(h, t.constant(masks->hidden));
  return spmm(a_hat, matmul(h, w.w2));
}

/// -sum_v y_v . log softmax(z)_v over the rows selected by `targets`.
inline Var cross_entropy(const Var& logits, const DenseMatrix& targets) {
  Tape& t = *logits.tape();
  return scale(sum(hadamard(t.constant(targets), row_log_softmax(logits))), -1.0);
}

/// Training objective: summed cross-entropy over the training nodes plus
/// rho |W1|^2.
inline Var inner_loss(const GcnVars& w, const Var& x, const Var& a_hat, const LabeledSplit& split,
                      const LossConfig& cfg, const DropoutMasks* masks) {
  if (split.train().empty()) throw ShapeError("inner_loss: empty training mask");
  const Var z = gcn_logits(w, x, a_hat, masks);
  Var loss = cross_entropy(z, split.targets(MaskKind::train));
  if (cfg.rho != 0.0) loss = add(loss, scale(frobenius_dot(w.w1, w.w1), cfg.rho));
  return loss;
}

inline Var inner_loss(const GcnVars& w, const Var& x, const Var& a_hat, const DenseMatrix& y_train,
                      const LossConfig& cfg, const DropoutMasks* masks) {
  const Var z = gcn_logits(w, x, a_hat, masks);
  Var loss = cross_entropy(z, y_train);
  if (cfg.rho != 0.0) loss = add(loss, scale(frobenius_dot(w.w1, w.w1), cfg.rho));
  return loss;
}

/// Unregularized cross-entropy over validation split (A), without dropout.
inline Var outer_loss(const GcnVars& w, const Var& x, const Var& a_hat, const LabeledSplit& split) {
  if (split.val_a().empty()) throw ShapeError("outer_loss: empty validation mask");
  return cross_entropy(gcn_logits(w, x, a_hat, nullptr), split.targets(MaskKind::val_a));
}

// ---- untaped evaluation -------------------------------------------------------

inline DenseMatrix gcn_logits(const GcnParams& p, const DenseMatrix& x, const SparseMatrix& a_hat,
                              const DropoutMasks* masks = nullptr) {
  if (x.cols() != p.w1.rows() || p.w1.cols() != p.w2.rows())
    throw ShapeError("gcn: shape chain broken");
  if (a_hat.rows() != x.rows() || a_hat.cols() != x.rows())
    throw ShapeError("gcn: adjacency does not match the number of nodes");
  DenseMatrix h = relu(spmm(a_hat, matmul(masks ? hadamard(x, masks->input) : x, p.w1)));
  if (masks) h = hadamard(h, masks->hidden);
  return spmm(a_hat, matmul(h, p.w2));
}

/// Class probabilities, one row per node.
inline DenseMatrix forward(const GcnParams& p, const DenseMatrix& x, const SparseMatrix& a_hat,
                           const DropoutMasks* masks = nullptr) {
  return row_softmax(gcn_logits(p, x, a_hat, masks));
}

inline double cross_entropy_value(const DenseMatrix& logits, const std::vector<int>& labels,
                                  const std::vector<std::size_t>& nodes) {
  const DenseMatrix lp = row_log_softmax(logits);
  double s = 0.0;
  for (std::size_t v : nodes) s -= lp(v, static_cast<std::size_t>(labels[v]));
  return s;
}

/// Mean of forward passes over `s` graphs drawn from `dist`, no dropout. A
/// deterministic distribution takes a single pass.
inline DenseMatrix predict_empirical(const GcnParams& p, const DenseMatrix& x,
                                     const EdgeDistribution& dist, std::size_t s, Rng& rng) {
  if (s == 0) throw DomainError("predict_empirical: need at least one sample");
  if (dist.is_deterministic()) return forward(p, x, sample(dist, rng).normalized);
  DenseMatrix mean(x.rows(), p.n_classes());
  for (std::size_t i = 0; i < s; ++i) {
    const SampledGraph g = sample(dist, rng);
    const DenseMatrix out = forward(p, x, g.normalized);
    for (std::size_t k = 0; k < mean.size(); ++k) mean.data()[k] += out.data()[k];
  }
  return scale(mean, 1.0 / static_cast<double>(s));
}

/// Fraction of masked nodes whose argmax prediction equals the label (ties go
/// to the lowest class index).
inline double accuracy(const DenseMatrix& predictions, const LabeledSplit& split, MaskKind kind) {
  const std::vector<std::size_t> nodes = split.nodes(kind);
  if (nodes.empty()) throw DomainError(std::string("accuracy: empty ") + mask_name(kind) + " mask");
  const std::vector<std::size_t> pred = row_argmax(predictions);
  std::vector<int> labels;
  if (kind == MaskKind::test) {
    labels = split.read_test_labels();
  } else {
    labels.reserve(nodes.size());
    for (std::size_t v : nodes) labels.push_back(split.label(v));
  }
  std::size_t correct = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k)
    if (static_cast<int>(pred[nodes[k]]) == labels[k]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

}  // namespace lds
