#include "fedlev/sparse_matrix.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace fedlev {

SparseBinaryMatrix::SparseBinaryMatrix(std::size_t n_rows, std::size_t n_cols,
                                       std::vector<std::size_t> row_offsets,
                                       std::vector<Index> col_indices)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)) {
  if (row_offsets_.size() != n_rows_ + 1) {
    throw DataError("row_offsets must have n_rows+1 entries");
  }
  if (row_offsets_.front() != 0 || row_offsets_.back() != col_indices_.size()) {
    throw DataError("row_offsets must start at 0 and end at nnz");
  }
  for (std::size_t i = 0; i < n_rows_; ++i) {
    if (row_offsets_[i] > row_offsets_[i + 1]) throw DataError("row_offsets not monotone");
    for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      if (col_indices_[k] >= n_cols_) {
        throw DataError("column index " + std::to_string(col_indices_[k]) + " out of range in row " +
                        std::to_string(i));
      }
      if (k > row_offsets_[i] && col_indices_[k] <= col_indices_[k - 1]) {
        throw DataError("column indices not strictly increasing in row " + std::to_string(i));
      }
    }
  }
}

SparseBinaryMatrix SparseBinaryMatrix::from_rows(std::size_t n_cols,
                                                 std::vector<std::vector<Index>> rows) {
  std::vector<std::size_t> offsets{0};
  offsets.reserve(rows.size() + 1);
  std::size_t total = 0;
  for (const auto& r : rows) total += r.size();
  std::vector<Index> cols;
  cols.reserve(total);
  for (auto& r : rows) {
    std::sort(r.begin(), r.end());
    if (std::adjacent_find(r.begin(), r.end()) != r.end()) {
      throw DataError("duplicate entry in row " + std::to_string(offsets.size() - 1));
    }
    cols.insert(cols.end(), r.begin(), r.end());
    offsets.push_back(cols.size());
  }
  return SparseBinaryMatrix(rows.size(), n_cols, std::move(offsets), std::move(cols));
}

double SparseBinaryMatrix::density() const {
  if (n_rows_ == 0 || n_cols_ == 0) return 0.0;
  return static_cast<double>(nnz()) / (static_cast<double>(n_rows_) * static_cast<double>(n_cols_));
}

bool SparseBinaryMatrix::contains(std::size_t i, Index j) const {
  auto r = row(i);
  return std::binary_search(r.begin(), r.end(), j);
}

SparseBinaryMatrix SparseBinaryMatrix::transpose() const {
  std::vector<std::size_t> offsets(n_cols_ + 1, 0);
  for (Index j : col_indices_) ++offsets[j + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  std::vector<Index> cols(nnz());
  std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
  // Row-major traversal emits each column's row indices in increasing order.
  for (std::size_t i = 0; i < n_rows_; ++i) {
    for (Index j : row(i)) cols[cursor[j]++] = static_cast<Index>(i);
  }
  return SparseBinaryMatrix(n_cols_, n_rows_, std::move(offsets), std::move(cols));
}

SparseBinaryMatrix SparseBinaryMatrix::select_rows(std::span<const std::size_t> rows) const {
  std::vector<std::size_t> offsets{0};
  offsets.reserve(rows.size() + 1);
  std::vector<Index> cols;
  for (std::size_t i : rows) {
    if (i >= n_rows_) throw DataError("row index out of range in select_rows");
    auto r = row(i);
    cols.insert(cols.end(), r.begin(), r.end());
    offsets.push_back(cols.size());
  }
  return SparseBinaryMatrix(rows.size(), n_cols_, std::move(offsets), std::move(cols));
}

SparseBinaryMatrix SparseBinaryMatrix::select_columns(std::span<const Index> columns) const {
  constexpr Index kAbsent = static_cast<Index>(-1);
  std::vector<Index> remap(n_cols_, kAbsent);
  for (std::size_t k = 0; k < columns.size(); ++k) {
    if (columns[k] >= n_cols_) throw DataError("column index out of range in select_columns");
    if (remap[columns[k]] != kAbsent) throw DataError("duplicate column in select_columns");
    remap[columns[k]] = static_cast<Index>(k);
  }
  std::vector<std::vector<Index>> rows(n_rows_);
  for (std::size_t i = 0; i < n_rows_; ++i) {
    for (Index j : row(i)) {
      if (remap[j] != kAbsent) rows[i].push_back(remap[j]);
    }
  }
  return from_rows(columns.size(), std::move(rows));
}

std::vector<std::size_t> SparseBinaryMatrix::column_counts() const {
  std::vector<std::size_t> counts(n_cols_, 0);
  for (Index j : col_indices_) ++counts[j];
  return counts;
}

Eigen::MatrixXd SparseBinaryMatrix::to_dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows_),
                                              static_cast<Eigen::Index>(n_cols_));
  for (std::size_t i = 0; i < n_rows_; ++i) {
    for (Index j : row(i)) out(static_cast<Eigen::Index>(i), j) = 1.0;
  }
  return out;
}

SparseBinaryMatrix SparseBinaryMatrix::vstack(std::span<const SparseBinaryMatrix> parts) {
  if (parts.empty()) return {};
  const std::size_t d = parts.front().n_cols();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<Index> cols;
  for (const auto& p : parts) {
    if (p.n_cols() != d) throw DataError("vstack: column counts differ");
    for (std::size_t i = 0; i < p.n_rows(); ++i) {
      auto r = p.row(i);
      cols.insert(cols.end(), r.begin(), r.end());
      offsets.push_back(cols.size());
    }
    rows += p.n_rows();
  }
  return SparseBinaryMatrix(rows, d, std::move(offsets), std::move(cols));
}

}  // namespace fedlev
