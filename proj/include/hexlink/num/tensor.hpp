#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace hexlink::num {

// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> values);
  Tensor2(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor2 identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool same_shape(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }

  void fill(double v);
  bool all_finite() const;
  double max_abs() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Plain (non-recorded) dense helpers; the tape ops are built from these.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// a * b^T
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
// a^T * b
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
Tensor2 transpose(const Tensor2& a);
void add_inplace(Tensor2& acc, const Tensor2& x, double scale = 1.0);
double max_abs_diff(const Tensor2& a, const Tensor2& b);

}  // namespace hexlink::num
