#pragma once

// Bernoulli graph generator and fixed graph constructions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lds/dense_matrix.hpp"
#include "lds/error.hpp"
#include "lds/rng.hpp"
#include "lds/sparse_matrix.hpp"
#include "lds/tape.hpp"

namespace lds {

/// Independent Bernoulli edge probabilities theta in [0,1]^{n x n}.
class EdgeDistribution {
 public:
  EdgeDistribution() = default;
  EdgeDistribution(DenseMatrix theta, bool symmetric = true, bool diag_zero = true)
      : theta_(std::move(theta)), symmetric_(symmetric), diag_zero_(diag_zero) {
    validate();
  }

  /// The deterministic distribution that always yields `adjacency`.
  static EdgeDistribution deterministic(const SparseMatrix& adjacency, bool symmetric = true,
                                        bool diag_zero = true) {
    DenseMatrix t = adjacency.to_dense();
    for (double& v : t.values()) v = v != 0.0 ? 1.0 : 0.0;
    if (diag_zero)
      for (std::size_t i = 0; i < t.rows(); ++i) t(i, i) = 0.0;
    if (symmetric)
      for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = i + 1; j < t.cols(); ++j)
          t(i, j) = t(j, i) = std::max(t(i, j), t(j, i));
    return EdgeDistribution(std::move(t), symmetric, diag_zero);
  }

  std::size_t n() const noexcept { return theta_.rows(); }
  const DenseMatrix& theta() const noexcept { return theta_; }
  bool symmetric() const noexcept { return symmetric_; }
  bool diag_zero() const noexcept { return diag_zero_; }

  void set_theta(DenseMatrix theta) {
    theta_ = std::move(theta);
    validate();
  }

  /// sum_{i<j} theta_ij when symmetric (undirected edges), sum_{i!=j} otherwise.
  double expected_edges() const {
    double s = 0.0;
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t j = symmetric_ ? i + 1 : 0; j < n(); ++j)
        if (i != j) s += theta_(i, j);
    return s;
  }

  bool is_deterministic() const {
    return std::all_of(theta_.values().begin(), theta_.values().end(),
                       [](double v) { return v == 0.0 || v == 1.0; });
  }

 private:
  void validate() const {
    if (theta_.rows() != theta_.cols())
      throw ShapeError("EdgeDistribution: theta must be square, got " + theta_.shape_string());
    for (std::size_t k = 0; k < theta_.size(); ++k) {
      const double v = theta_.data()[k];
      if (!(v >= 0.0 && v <= 1.0))
        throw DomainError("EdgeDistribution: theta(" + std::to_string(k / n()) + "," +
                          std::to_string(k % n()) + ") = " + std::to_string(v) + " outside [0,1]");
    }
    if (symmetric_) {
      bool ok = true;
      detail::for_upper_pairs(n(), [&](std::size_t i, std::size_t j) {
        ok = ok && theta_(i, j) == theta_(j, i);
      });
      if (!ok) throw DomainError("EdgeDistribution: theta is not symmetric");
    }
    if (diag_zero_)
      for (std::size_t i = 0; i < n(); ++i)
        if (theta_(i, i) != 0.0) throw DomainError("EdgeDistribution: nonzero diagonal");
  }

  DenseMatrix theta_;
  bool symmetric_ = true;
  bool diag_zero_ = true;
};

struct SampledGraph {
  SparseMatrix adjacency;
  SparseMatrix normalized;
  std::uint64_t sample_seed = 0;
};

/// Â = D^{-1/2} (A + I) D^{-1/2}, D_ii = 1 + sum_j A_ij. Accepts nonnegative
/// weights as well as binary adjacency.
inline SparseMatrix normalize_adjacency(const SparseMatrix& a) {
  return detail::normalized_adjacency(a);
}

/// One draw A ~ Ber(theta). Entry (i, j) uses stream position i*n + j of
/// `seed`, so the result does not depend on iteration order. In symmetric
/// mode only i < j is drawn and mirrored.
inline SparseMatrix sample_adjacency(const EdgeDistribution& dist, std::uint64_t seed) {
  const std::size_t n = dist.n();
  const DenseMatrix& t = dist.theta();
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::size_t> cols;
  if (dist.symmetric()) {
    // Upper triangle first, then mirror into CSR through per-row lists.
    std::vector<std::vector<std::size_t>> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* ti = t.data() + i * n;
      const std::uint64_t base = static_cast<std::uint64_t>(i) * n;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double p = ti[j];
        if (p <= 0.0) continue;
        if (p >= 1.0 || uniform_at(seed, base + j) < p) {
          rows[i].push_back(j);
          rows[j].push_back(i);
        }
      }
      if (!dist.diag_zero() && t(i, i) > 0.0 && uniform_at(seed, base + i) < t(i, i))
        rows[i].push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::sort(rows[i].begin(), rows[i].end());
      cols.insert(cols.end(), rows[i].begin(), rows[i].end());
      offsets[i + 1] = cols.size();
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double* ti = t.data() + i * n;
      const std::uint64_t base = static_cast<std::uint64_t>(i) * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double p = ti[j];
        if (p <= 0.0) continue;
        if (p >= 1.0 || uniform_at(seed, base + j) < p) cols.push_back(j);
      }
      offsets[i + 1] = cols.size();
    }
  }
  std::vector<double> vals(cols.size(), 1.0);
  return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::move(vals));
}

inline SampledGraph sample(const EdgeDistribution& dist, std::uint64_t seed) {
  SampledGraph g;
  g.adjacency = sample_adjacency(dist, seed);
  g.normalized = normalize_adjacency(g.adjacency);
  g.sample_seed = seed;
  return g;
}

inline SampledGraph sample(const EdgeDistribution& dist, Rng& rng) {
  return sample(dist, rng.next_u64());
}

/// Straight-through estimator: d A / d theta := I. In symmetric mode A_ij and
/// A_ji share one Bernoulli variable, so their contributions are summed.
inline DenseMatrix straight_through_route(const DenseMatrix& grad_a, bool symmetric,
                                          bool diag_zero = true) {
  if (grad_a.rows() != grad_a.cols())
    throw ShapeError("straight_through_route: gradient must be square, got " +
                     grad_a.shape_string());
  const std::size_t n = grad_a.rows();
  DenseMatrix out = grad_a;
  if (symmetric) {
    detail::for_upper_pairs(n, [&](std::size_t i, std::size_t j) {
      out(i, j) = out(j, i) = grad_a(i, j) + grad_a(j, i);
    });
  }
  if (diag_zero)
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 0.0;
  return out;
}

inline DenseMatrix straight_through_route(const DenseMatrix& grad_a, const EdgeDistribution& dist) {
  if (grad_a.rows() != dist.n())
    throw ShapeError("straight_through_route: gradient is " + grad_a.shape_string() +
                     " for a distribution over " + std::to_string(dist.n()) + " nodes");
  return straight_through_route(grad_a, dist.symmetric(), dist.diag_zero());
}

/// Euclidean projection onto the feasible set: the box [0,1], intersected
/// with the symmetric matrices and zero diagonal when requested.
inline DenseMatrix project_hypercube(const DenseMatrix& theta, bool symmetric = false,
                                     bool diag_zero = false) {
  DenseMatrix out = theta;
  const std::size_t n = theta.rows();
  if (symmetric) {
    if (theta.rows() != theta.cols()) throw ShapeError("project_hypercube: symmetric mode needs a square matrix");
    detail::for_upper_pairs(n, [&](std::size_t i, std::size_t j) {
      const double a = theta(i, j);
      const double b = theta(j, i);
      out(i, j) = out(j, i) = a == b ? a : 0.5 * (a + b);
    });
  }
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  if (diag_zero)
    for (std::size_t i = 0; i < std::min(n, theta.cols()); ++i) out(i, i) = 0.0;
  return out;
}

// ---- fixed graphs -------------------------------------------------------------

enum class Metric { euclidean, cosine };

inline Metric parse_metric(const std::string& s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "cosine") return Metric::cosine;
  throw ConfigError("unknown metric '" + s + "' (expected euclidean or cosine)");
}
inline const char* metric_name(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

/// Squared Euclidean distance or cosine distance (1 - cos) for every pair.
inline DenseMatrix pairwise_distances(const DenseMatrix& x, Metric metric) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  DenseMatrix out(n, n);
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * d;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* xj = x.data() + j * d;
      double v = 0.0;
      if (metric == Metric::euclidean) {
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = xi[k] - xj[k];
          v += diff * diff;
        }
      } else {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += xi[k] * xj[k];
        const double denom = norms[i] * norms[j];
        v = 1.0 - (denom > 0.0 ? dot / denom : 0.0);
      }
      out(i, j) = out(j, i) = v;
    }
  }
  return out;
}

/// For each node, the `kmax` nearest other nodes, closest first; equal
/// distances are ordered by node index.
inline std::vector<std::vector<std::size_t>> knn_table(const DenseMatrix& x, std::size_t kmax,
                                                       Metric metric) {
  const std::size_t n = x.rows();
  if (kmax == 0 || kmax >= n)
    throw DomainError("knn: k must satisfy 0 < k < N (k=" + std::to_string(kmax) +
                      ", N=" + std::to_string(n) + ")");
  const DenseMatrix dist = pairwise_distances(x, metric);
  std::vector<std::vector<std::size_t>> table(n);
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.push_back(j);
    auto closer = [&](std::size_t a, std::size_t b) {
      const double da = dist(i, a);
      const double db = dist(i, b);
      return da != db ? da < db : a < b;
    };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kmax), cand.end(),
                      closer);
    table[i].assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kmax));
  }
  return table;
}

/// Union-symmetrized kNN graph (A or A^T) from a neighbor table.
inline SparseMatrix knn_graph_from_table(const std::vector<std::vector<std::size_t>>& table,
                                         std::size_t k) {
  const std::size_t n = table.size();
  std::vector<std::vector<std::size_t>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (k > table[i].size()) throw DomainError("knn: table holds fewer than k neighbors");
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = table[i][r];
      rows[i].push_back(j);
      rows[j].push_back(i);
    }
  }
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(rows[i].begin(), rows[i].end());
    rows[i].erase(std::unique(rows[i].begin(), rows[i].end()), rows[i].end());
    cols.insert(cols.end(), rows[i].begin(), rows[i].end());
    offsets[i + 1] = cols.size();
  }
  std::vector<double> vals(cols.size(), 1.0);
  return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::move(vals));
}

inline SparseMatrix knn_graph(const DenseMatrix& x, std::size_t k, Metric metric) {
  return knn_graph_from_table(knn_table(x, k, metric), k);
}

/// Binary symmetric Erdos-Renyi sample with edge probability p.
inline SparseMatrix erdos_renyi_graph(std::size_t n, double p, Rng& rng) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("erdos_renyi: p must lie in (0,1)");
  DenseMatrix t(n, n, p);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 0.0;
  return sample_adjacency(EdgeDistribution(std::move(t), true, true), rng.next_u64());
}

/// Complete graph without self-loops, unit weights.
inline SparseMatrix dense_graph(std::size_t n) {
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::size_t> cols;
  cols.reserve(n * (n > 0 ? n - 1 : 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cols.push_back(j);
    offsets[i + 1] = cols.size();
  }
  std::vector<double> vals(cols.size(), 1.0);
  return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::move(vals));
}

/// Median Euclidean distance over all pairs i < j.
inline double median_pairwise_distance(const DenseMatrix& x) {
  const DenseMatrix d2 = pairwise_distances(x, Metric::euclidean);
  std::vector<double> v;
  v.reserve(x.rows() * (x.rows() - 1) / 2);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) v.push_back(std::sqrt(d2(i, j)));
  if (v.empty()) return 1.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

/// Dense weighted graph w_ij = exp(-|x_i - x_j|^2 / (2 sigma^2)), zero
/// diagonal. Without `sigma` the median pairwise distance is used.
inline SparseMatrix rbf_graph(const DenseMatrix& x, std::optional<double> sigma = std::nullopt) {
  const double s = sigma ? *sigma : median_pairwise_distance(x);
  if (!(s > 0.0)) throw DomainError("rbf: bandwidth must be positive");
  const DenseMatrix d2 = pairwise_distances(x, Metric::euclidean);
  const std::size_t n = x.rows();
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cols.push_back(j);
      vals.push_back(std::exp(-d2(i, j) / (2.0 * s * s)));
    }
    offsets[i + 1] = cols.size();
  }
  return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::move(vals));
}

enum class FixedGraphKind { sparse_er, dense, rbf };

struct FixedGraphParams {
  double er_probability = 0.01;
  std::optional<double> rbf_sigma;
};

inline SparseMatrix fixed_graph(FixedGraphKind kind, const DenseMatrix& x,
                                const FixedGraphParams& params, Rng& rng) {
  switch (kind) {
    case FixedGraphKind::sparse_er: return erdos_renyi_graph(x.rows(), params.er_probability, rng);
    case FixedGraphKind::dense: return dense_graph(x.rows());
    case FixedGraphKind::rbf: return rbf_graph(x, params.rbf_sigma);
  }
  throw ConfigError("fixed_graph: unknown kind");
}

// ---- theta export -------------------------------------------------------------

/// Writes `i j theta_ij` lines (17 significant digits), omitting entries below
/// `threshold`. Symmetric distributions list each pair once with i < j.
inline void write_theta_triples(std::ostream& os, const EdgeDistribution& dist,
                                double threshold = 1e-4) {
  os << "# n " << dist.n() << " symmetric " << (dist.symmetric() ? 1 : 0) << " diag_zero "
     << (dist.diag_zero() ? 1 : 0) << "\n";
  os << std::setprecision(17);
  const auto& t = dist.theta();
  for (std::size_t i = 0; i < dist.n(); ++i)
    for (std::size_t j = dist.symmetric() ? i : 0; j < dist.n(); ++j) {
      const double v = t(i, j);
      if (v > 0.0 && v >= threshold) os << i << ' ' << j << ' ' << v << '\n';
    }
}

inline void write_theta_triples(const std::string& path, const EdgeDistribution& dist,
                                double threshold = 1e-4) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_theta_triples(os, dist, threshold);
  if (!os) throw FormatError("write failed for '" + path + "'");
}

inline EdgeDistribution read_theta_triples(std::istream& is, const std::string& name = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  std::size_t n = 0;
  int symmetric = 1;
  int diag_zero = 1;
  bool have_header = false;
  DenseMatrix t;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key_n, key_s, key_d;
      if (!(ls >> hash >> key_n >> n >> key_s >> symmetric >> key_d >> diag_zero))
        throw FormatError(name + ":" + std::to_string(lineno) + ": malformed header");
      t = DenseMatrix(n, n);
      have_header = true;
      continue;
    }
    if (!have_header) throw FormatError(name + ": missing '# n ...' header");
    std::size_t i = 0, j = 0;
    double v = 0.0;
    if (!(ls >> i >> j >> v))
      throw FormatError(name + ":" + std::to_string(lineno) + ": expected 'i j theta'");
    if (i >= n || j >= n)
      throw FormatError(name + ":" + std::to_string(lineno) + ": node id out of range");
    t(i, j) = v;
    if (symmetric) t(j, i) = v;
  }
  if (!have_header) throw FormatError(name + ": empty theta file");
  return EdgeDistribution(std::move(t), symmetric != 0, diag_zero != 0);
}

inline EdgeDistribution read_theta_triples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_theta_triples(is, path);
}

}  // namespace lds
