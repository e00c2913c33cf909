#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "lds/dense_matrix.hpp"
#include "lds/rng.hpp"
#include "lds/sparse_matrix.hpp"

namespace oracle {

using lds::DenseMatrix;
using lds::SparseMatrix;

inline DenseMatrix triple_loop_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

/// Dense product skipping exact zeros of `a`, accumulating k in ascending
/// order: the summation order of a row-wise CSR kernel.
inline DenseMatrix ordered_dense_product(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      if (a(i, k) == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
    }
  return c;
}

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, lds::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  DenseMatrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline DenseMatrix random_symmetric_binary(std::size_t n, double p, lds::Rng& rng) {
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < p) a(i, j) = a(j, i) = 1.0;
  return a;
}

/// Â evaluated entrywise from the dense formula (A+I)_ij / sqrt(d_i d_j).
inline DenseMatrix dense_normalized(const DenseMatrix& a) {
  const std::size_t n = a.rows();
  std::vector<double> d(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += a(i, j);
  DenseMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = (a(i, j) + (i == j ? 1.0 : 0.0)) / std::sqrt(d[i] * d[j]);
  return out;
}

/// Central differences of a scalar function of one matrix argument.
inline DenseMatrix central_difference(const std::function<double(const DenseMatrix&)>& f,
                                      const DenseMatrix& at, double h = 1e-5) {
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

/// Norm-wise relative error |a - b| / max(|b|, tiny).
inline double relative_error(const DenseMatrix& a, const DenseMatrix& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.data()[k] - b.data()[k];
    num += d * d;
    den += b.data()[k] * b.data()[k];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

/// Explicit per-node GCN forward: every aggregation is a loop over
/// neighbours of the dense normalized adjacency.
inline DenseMatrix per_node_gcn(const DenseMatrix& x, const DenseMatrix& a_hat,
                                const DenseMatrix& w1, const DenseMatrix& w2) {
  const std::size_t n = x.rows(), f = x.cols(), h = w1.cols(), c = w2.cols();
  DenseMatrix hidden(n, h);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t u = 0; u < n; ++u) {
      if (a_hat(v, u) == 0.0) continue;
      for (std::size_t j = 0; j < h; ++j) {
        double z = 0.0;
        for (std::size_t k = 0; k < f; ++k) z += x(u, k) * w1(k, j);
        hidden(v, j) += a_hat(v, u) * z;
      }
    }
  for (double& val : hidden.values()) val = val > 0.0 ? val : 0.0;
  DenseMatrix out(n, c);
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<double> logit(c, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
      if (a_hat(v, u) == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) {
        double z = 0.0;
        for (std::size_t k = 0; k < h; ++k) z += hidden(u, k) * w2(k, j);
        logit[j] += a_hat(v, u) * z;
      }
    }
    double m = logit[0];
    for (double l : logit) m = std::max(m, l);
    double s = 0.0;
    for (double l : logit) s += std::exp(l - m);
    for (std::size_t j = 0; j < c; ++j) out(v, j) = std::exp(logit[j] - m) / s;
  }
  return out;
}

}  // namespace oracle
