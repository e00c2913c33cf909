#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lds/error.hpp"

namespace lds {

/// Row-major matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw ShapeError("DenseMatrix: " + std::to_string(values_.size()) +
                       " values for a " + std::to_string(rows_) + "x" +
                       std::to_string(cols_) + " matrix");
    }
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("DenseMatrix::from_rows: ragged rows");
      v.insert(v.end(), row.begin(), row.end());
    }
    return DenseMatrix(r, c, std::move(v));
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return values_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * cols_ + j]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> row(std::size_t i) noexcept { return {values_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {values_.data() + i * cols_, cols_};
  }

  bool same_shape(const DenseMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

namespace detail {

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

template <class F>
DenseMatrix map(const DenseMatrix& a, F f) {
  DenseMatrix out(a.rows(), a.cols());
  const double* src = a.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
DenseMatrix zip(const DenseMatrix& a, const DenseMatrix& b, const char* op, F f) {
  require_same_shape(a, b, op);
  DenseMatrix out(a.rows(), a.cols());
  const double* x = a.data();
  const double* y = b.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

/// Visits every pair (i, j) with i < j < n in 32 x 32 tiles, so that the
/// mirrored entry (j, i) is read with good locality.
template <class F>
void for_upper_pairs(std::size_t n, F f) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < n; i0 += tile)
    for (std::size_t j0 = i0; j0 < n; j0 += tile) {
      const std::size_t i1 = std::min(i0 + tile, n);
      const std::size_t j1 = std::min(j0 + tile, n);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = std::max(j0, i + 1); j < j1; ++j) f(i, j);
    }
}

}  // namespace detail

/// Matrix product. Every output entry accumulates a(i,k) * b(k,j) over k in
/// ascending order starting from zero, so results do not depend on buffer
/// alignment or blocking. Zero entries of `a` are skipped.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + a.shape_string() + " x " +
                     b.shape_string() + ")");
  }
  DenseMatrix out(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  constexpr std::size_t block = 64;  // output columns held in registers
  std::vector<std::size_t> nz;
  nz.reserve(inner);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.data() + i * inner;
    nz.clear();
    for (std::size_t k = 0; k < inner; ++k)
      if (ai[k] != 0.0) nz.push_back(k);
    double* dst_row = out.data() + i * n;
    std::size_t j0 = 0;
    for (; j0 + block <= n; j0 += block) {
      double acc[block] = {};
      for (std::size_t k : nz) {
        const double w = ai[k];
        const double* src = b.data() + k * n + j0;
        for (std::size_t j = 0; j < block; ++j) acc[j] += w * src[j];
      }
      std::copy(acc, acc + block, dst_row + j0);
    }
    if (j0 < n) {
      double* __restrict dst = dst_row + j0;
      const std::size_t rest = n - j0;
      for (std::size_t k : nz) {
        const double w = ai[k];
        const double* __restrict src = b.data() + k * n + j0;
        for (std::size_t j = 0; j < rest; ++j) dst[j] += w * src[j];
      }
    }
  }
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
  return detail::zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  return detail::zip(a, b, "mul", [](double x, double y) { return x * y; });
}
inline DenseMatrix divide(const DenseMatrix& a, const DenseMatrix& b) {
  return detail::zip(a, b, "div", [](double x, double y) { return x / y; });
}
inline DenseMatrix scale(const DenseMatrix& a, double c) {
  return detail::map(a, [c](double x) { return c * x; });
}
inline DenseMatrix add_scalar(const DenseMatrix& a, double c) {
  return detail::map(a, [c](double x) { return x + c; });
}

/// relu'(0) is taken as 0.
inline DenseMatrix relu(const DenseMatrix& a) {
  return detail::map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}
inline DenseMatrix step(const DenseMatrix& a) {
  return detail::map(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}
inline DenseMatrix clamp01(const DenseMatrix& a) {
  return detail::map(a, [](double x) { return std::clamp(x, 0.0, 1.0); });
}
/// Indicator of the open interval (0, 1): where clamp01 passes gradient.
inline DenseMatrix interior01(const DenseMatrix& a) {
  return detail::map(a, [](double x) { return (x > 0.0 && x < 1.0) ? 1.0 : 0.0; });
}

inline DenseMatrix log(const DenseMatrix& a) {
  for (double x : a.values())
    if (!(x > 0.0)) throw DomainError("log: non-positive entry " + std::to_string(x));
  return detail::map(a, [](double x) { return std::log(x); });
}
inline DenseMatrix exp(const DenseMatrix& a) {
  return detail::map(a, [](double x) { return std::exp(x); });
}
inline DenseMatrix sqrt(const DenseMatrix& a) {
  for (double x : a.values())
    if (x < 0.0) throw DomainError("sqrt: negative entry " + std::to_string(x));
  return detail::map(a, [](double x) { return std::sqrt(x); });
}
/// 1/x with the convention 1/0 := 0.
inline DenseMatrix recip(const DenseMatrix& a) {
  return detail::map(a, [](double x) { return x == 0.0 ? 0.0 : 1.0 / x; });
}

inline double sum(const DenseMatrix& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return s;
}

inline double frobenius_dot(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "frobenius_dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline double frobenius_norm(const DenseMatrix& a) { return std::sqrt(frobenius_dot(a, a)); }

inline DenseMatrix row_sum(const DenseMatrix& a) {
  DenseMatrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double x : a.row(i)) s += x;
    out(i, 0) = s;
  }
  return out;
}

/// Repeats an r x 1 column across `cols` columns.
inline DenseMatrix broadcast_cols(const DenseMatrix& v, std::size_t cols) {
  if (v.cols() != 1) throw ShapeError("broadcast_cols: expected a column, got " + v.shape_string());
  DenseMatrix out(v.rows(), cols);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = v(i, 0);
  return out;
}

inline DenseMatrix broadcast_scalar(double s, std::size_t rows, std::size_t cols) {
  return DenseMatrix(rows, cols, s);
}

/// Softmax of each row, computed with max subtraction.
inline DenseMatrix row_softmax(const DenseMatrix& m) {
  DenseMatrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i);
    auto dst = out.row(i);
    if (src.empty()) continue;
    const double hi = *std::max_element(src.begin(), src.end());
    double z = 0.0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      dst[j] = std::exp(src[j] - hi);
      z += dst[j];
    }
    for (double& x : dst) x /= z;
  }
  return out;
}

inline DenseMatrix row_log_softmax(const DenseMatrix& m) {
  DenseMatrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i);
    auto dst = out.row(i);
    if (src.empty()) continue;
    const double hi = *std::max_element(src.begin(), src.end());
    double z = 0.0;
    for (double x : src) z += std::exp(x - hi);
    const double lz = hi + std::log(z);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] - lz;
  }
  return out;
}

/// Index of the largest entry in each row; ties go to the lowest index.
inline std::vector<std::size_t> row_argmax(const DenseMatrix& m) {
  std::vector<std::size_t> out(m.rows(), 0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.size(); ++j)
      if (r[j] > r[best]) best = j;
    out[i] = best;
  }
  return out;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace lds
