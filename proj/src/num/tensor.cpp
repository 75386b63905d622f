#include "hexlink/num/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "hexlink/errors.hpp"

namespace hexlink::num {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ShapeError("tensor of shape " + shape_str() + " given " + std::to_string(values_.size()) + " values");
  }
}

Tensor2::Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  values_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged tensor literal");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::string Tensor2::shape_str() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

void Tensor2::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor2::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor2::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul " + a.shape_str() + " * " + b.shape_str());
  Tensor2 out(a.rows(), b.cols());
  const std::size_t n = a.cols();
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const double s = ar[k];
      if (s == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt " + a.shape_str() + " * " + b.shape_str() + "^T");
  Tensor2 out(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn " + a.shape_str() + "^T * " + b.shape_str());
  Tensor2 out(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.row(k).data();
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = ar[i];
      if (s == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

void add_inplace(Tensor2& acc, const Tensor2& x, double scale) {
  if (!acc.same_shape(x)) throw ShapeError("add " + acc.shape_str() + " + " + x.shape_str());
  auto av = acc.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += scale * xv[i];
}

double max_abs_diff(const Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) throw ShapeError("compare " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace hexlink::num
