#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lds/dense_matrix.hpp"
#include "lds/error.hpp"

namespace lds {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Compressed sparse row matrix. Column indices are sorted within each row
/// and every (row, col) pair appears at most once.
class SparseMatrix {
 public:
  SparseMatrix() : row_offsets_(1, 0) {}
  explicit SparseMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), row_offsets_(rows + 1, 0) {}

  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_offsets,
               std::vector<std::size_t> col_indices, std::vector<double> values)
      : rows_(rows),
        cols_(cols),
        row_offsets_(std::move(row_offsets)),
        col_indices_(std::move(col_indices)),
        values_(std::move(values)) {
    validate();
  }

  /// Builds from unordered triplets. Duplicate coordinates are rejected.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> entries) {
    for (const auto& t : entries) {
      if (t.row >= rows || t.col >= cols) {
        throw ShapeError("SparseMatrix: entry (" + std::to_string(t.row) + ", " +
                         std::to_string(t.col) + ") outside " + std::to_string(rows) + "x" +
                         std::to_string(cols));
      }
    }
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<std::size_t> offsets(rows + 1, 0);
    std::vector<std::size_t> cols_out;
    std::vector<double> vals;
    cols_out.reserve(entries.size());
    vals.reserve(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (k > 0 && entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col) {
        throw ShapeError("SparseMatrix: duplicate entry (" + std::to_string(entries[k].row) +
                         ", " + std::to_string(entries[k].col) + ")");
      }
      ++offsets[entries[k].row + 1];
      cols_out.push_back(entries[k].col);
      vals.push_back(entries[k].value);
    }
    for (std::size_t i = 0; i < rows; ++i) offsets[i + 1] += offsets[i];
    return SparseMatrix(rows, cols, std::move(offsets), std::move(cols_out), std::move(vals));
  }

  /// Keeps every entry whose value is not exactly zero.
  static SparseMatrix from_dense(const DenseMatrix& d) {
    SparseMatrix s(d.rows(), d.cols());
    for (std::size_t i = 0; i < d.rows(); ++i) {
      for (std::size_t j = 0; j < d.cols(); ++j) {
        if (d(i, j) != 0.0) {
          s.col_indices_.push_back(j);
          s.values_.push_back(d(i, j));
        }
      }
      s.row_offsets_[i + 1] = s.col_indices_.size();
    }
    return s;
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<std::size_t> offsets(n + 1), cols(n);
    for (std::size_t i = 0; i <= n; ++i) offsets[i] = i;
    for (std::size_t i = 0; i < n; ++i) cols[i] = i;
    return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::vector<double>(n, 1.0));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  const std::vector<std::size_t>& row_offsets() const noexcept { return row_offsets_; }
  const std::vector<std::size_t>& col_indices() const noexcept { return col_indices_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& mutable_values() noexcept { return values_; }

  /// Entry lookup by binary search within the row; absent entries are 0.
  double at(std::size_t i, std::size_t j) const {
    const auto b = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[i]);
    const auto e = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[i + 1]);
    const auto it = std::lower_bound(b, e, j);
    if (it == e || *it != j) return 0.0;
    return values_[static_cast<std::size_t>(it - col_indices_.begin())];
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k)
        d(i, col_indices_[k]) = values_[k];
    return d;
  }

  SparseMatrix transposed() const {
    SparseMatrix t(cols_, rows_);
    std::vector<std::size_t> counts(cols_ + 1, 0);
    for (std::size_t c : col_indices_) ++counts[c + 1];
    for (std::size_t j = 0; j < cols_; ++j) counts[j + 1] += counts[j];
    t.row_offsets_ = counts;
    t.col_indices_.resize(nnz());
    t.values_.resize(nnz());
    std::vector<std::size_t> cursor(counts.begin(), counts.end() - 1);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
        const std::size_t dst = cursor[col_indices_[k]]++;
        t.col_indices_[dst] = i;
        t.values_[dst] = values_[k];
      }
    }
    return t;
  }

  bool is_symmetric() const {
    if (rows_ != cols_) return false;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k)
        if (at(col_indices_[k], i) != values_[k]) return false;
    return true;
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  void validate() const {
    if (row_offsets_.size() != rows_ + 1)
      throw ShapeError("SparseMatrix: row_offsets must have rows+1 entries");
    if (row_offsets_.front() != 0 || row_offsets_.back() != col_indices_.size())
      throw ShapeError("SparseMatrix: row_offsets do not span col_indices");
    if (col_indices_.size() != values_.size())
      throw ShapeError("SparseMatrix: col_indices and values differ in length");
    for (std::size_t i = 0; i < rows_; ++i) {
      if (row_offsets_[i] > row_offsets_[i + 1])
        throw ShapeError("SparseMatrix: row_offsets not monotone at row " + std::to_string(i));
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
        if (col_indices_[k] >= cols_)
          throw ShapeError("SparseMatrix: column index out of range in row " + std::to_string(i));
        if (k > row_offsets_[i] && col_indices_[k] <= col_indices_[k - 1])
          throw ShapeError("SparseMatrix: unsorted or duplicate column in row " +
                           std::to_string(i));
      }
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<std::size_t> col_indices_;
  std::vector<double> values_;
};

/// Sparse times dense. Each output row accumulates its nonzeros in ascending
/// column order.
inline DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("spmm: inner dimensions differ (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " x " + b.shape_string() + ")");
  }
  DenseMatrix out(a.rows(), b.cols());
  const auto& off = a.row_offsets();
  const auto& idx = a.col_indices();
  const auto& val = a.values();
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.data() + i * n;
    for (std::size_t k = off[i]; k < off[i + 1]; ++k) {
      const double w = val[k];
      const double* src = b.data() + idx[k] * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

}  // namespace lds
