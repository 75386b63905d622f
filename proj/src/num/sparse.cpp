#include "hexlink/num/sparse.hpp"

#include <algorithm>

#include "hexlink/errors.hpp"

namespace hexlink::num {

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries) {
  for (const auto& e : entries) {
    if (e.row >= rows || e.col >= cols) throw ShapeError("sparse entry out of bounds");
  }
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseMatrix m(rows, cols);
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < entries.size() && entries[j].row == entries[i].row && entries[j].col == entries[i].col) {
      sum += entries[j].value;
      ++j;
    }
    if (sum != 0.0) {
      m.col_idx_.push_back(entries[i].col);
      m.values_.push_back(sum);
      ++m.row_ptr_[entries[i].row + 1];
    }
    i = j;
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<Triplet> t;
  t.reserve(n);
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return from_triplets(n, n, std::move(t));
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
  const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
  const auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return values_[static_cast<std::size_t>(it - col_idx_.begin())];
}

double SparseMatrix::row_sum(std::size_t r) const {
  double s = 0.0;
  for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += values_[k];
  return s;
}

SparseMatrix SparseMatrix::transposed() const {
  std::vector<Triplet> t;
  t.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) t.push_back({col_idx_[k], r, values_[k]});
  }
  return from_triplets(cols_, rows_, std::move(t));
}

Tensor2 SparseMatrix::to_dense() const {
  Tensor2 d(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) d(r, col_idx_[k]) = values_[k];
  }
  return d;
}

Tensor2 SparseMatrix::multiply(const Tensor2& dense) const {
  if (cols_ != dense.rows()) {
    throw ShapeError("spmm (" + std::to_string(rows_) + "x" + std::to_string(cols_) + ") * " + dense.shape_str());
  }
  Tensor2 out(rows_, dense.cols());
  const std::size_t m = dense.cols();
  for (std::size_t r = 0; r < rows_; ++r) {
    double* o = out.row(r).data();
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const double v = values_[k];
      const double* h = dense.row(col_idx_[k]).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += v * h[j];
    }
  }
  return out;
}

std::vector<Triplet> SparseMatrix::triplets() const {
  std::vector<Triplet> t;
  t.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) t.push_back({r, col_idx_[k], values_[k]});
  }
  return t;
}

}  // namespace hexlink::num
