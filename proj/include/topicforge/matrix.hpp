#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "topicforge/error.hpp"

namespace topicforge {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), Errc::EmptyInput, "Matrix::from_rows: no rows");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require(rows[r].size() == m.cols_, Errc::FormatError, "Matrix::from_rows: ragged rows");
      for (std::size_t c = 0; c < m.cols_; ++c) m(r, c) = rows[r][c];
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  const std::vector<double>& data() const noexcept { return data_; }

  double max_row_sum_error() const noexcept {
    double worst = 0.0;
    for (std::size_t r = 0; r < rows_; ++r) {
      double sum = 0.0;
      for (double v : row(r)) sum += v;
      worst = std::max(worst, std::fabs(sum - 1.0));
    }
    return worst;
  }

  bool row_stochastic(double tol = 1e-9) const noexcept { return max_row_sum_error() <= tol; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace topicforge
