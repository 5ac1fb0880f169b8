#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dp2fl/error.hpp"

namespace dp2fl {

using Vector = std::vector<double>;

/// Dense row-major matrix. Small enough that we never need BLAS.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void require_size(std::size_t got, std::size_t want, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
bool all_finite(std::span<const double> a);

/// y = M·x
Vector matvec(const Matrix& m, std::span<const double> x);

/// y = Mᵀ·x
Vector matvec_transposed(const Matrix& m, std::span<const double> x);

Vector concat(std::span<const double> a, std::span<const double> b);

}  // namespace dp2fl
