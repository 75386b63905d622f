#pragma once

#include <cstddef>
#include <vector>

#include "hexlink/num/tensor.hpp"

namespace hexlink::num {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

// Compressed sparse row matrix. Column indices are sorted within each row and
// unique.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  // Duplicate (row, col) entries are summed; explicit zeros are dropped.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries);
  static SparseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }

  std::size_t row_begin(std::size_t r) const { return row_ptr_[r]; }
  std::size_t row_end(std::size_t r) const { return row_ptr_[r + 1]; }
  std::size_t col_index(std::size_t k) const { return col_idx_[k]; }
  double value(std::size_t k) const { return values_[k]; }

  // Stored value or 0.
  double at(std::size_t r, std::size_t c) const;
  double row_sum(std::size_t r) const;

  SparseMatrix transposed() const;
  Tensor2 to_dense() const;
  // this * dense
  Tensor2 multiply(const Tensor2& dense) const;

  std::vector<Triplet> triplets() const;

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

}  // namespace hexlink::num
