#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedlev {

/// Raised when a matrix or dataset violates a structural invariant.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cell x feature 0/1 matrix in compressed row form. Entries are implicitly
/// one; column indices are strictly increasing within each row.
class SparseBinaryMatrix {
 public:
  using Index = std::uint32_t;

  SparseBinaryMatrix() : row_offsets_{0} {}

  /// Takes ownership of CSR arrays and validates them. Throws DataError.
  SparseBinaryMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<std::size_t> row_offsets,
                     std::vector<Index> col_indices);

  /// Builds from per-row index lists. Rows are sorted; duplicates are rejected.
  static SparseBinaryMatrix from_rows(std::size_t n_cols, std::vector<std::vector<Index>> rows);

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return n_cols_; }
  std::size_t nnz() const { return col_indices_.size(); }
  double density() const;

  std::span<const Index> row(std::size_t i) const {
    return {col_indices_.data() + row_offsets_[i], row_offsets_[i + 1] - row_offsets_[i]};
  }
  std::size_t row_nnz(std::size_t i) const { return row_offsets_[i + 1] - row_offsets_[i]; }
  const std::vector<std::size_t>& row_offsets() const { return row_offsets_; }
  const std::vector<Index>& col_indices() const { return col_indices_; }

  bool contains(std::size_t i, Index j) const;

  /// d x n transpose; column access for leverage scoring goes through this.
  SparseBinaryMatrix transpose() const;

  /// Rows in the given order.
  SparseBinaryMatrix select_rows(std::span<const std::size_t> rows) const;

  /// Keeps the listed columns, renumbered 0..s-1 in the order given.
  SparseBinaryMatrix select_columns(std::span<const Index> columns) const;

  /// Number of nonzeros per column.
  std::vector<std::size_t> column_counts() const;

  Eigen::MatrixXd to_dense() const;

  /// Concatenates matrices with equal column count.
  static SparseBinaryMatrix vstack(std::span<const SparseBinaryMatrix> parts);

  friend bool operator==(const SparseBinaryMatrix&, const SparseBinaryMatrix&) = default;

 private:
  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<Index> col_indices_;
};

}  // namespace fedlev
