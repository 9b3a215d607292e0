#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace flowbridge {

/// Dense row-major matrix of doubles. Column vectors are (n x 1).
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {}
  Matrix(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    assert(data_.size() == static_cast<size_t>(rows_) * cols_);
  }

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }
  static Matrix column(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Matrix(n, 1, std::move(v));
  }
  static Matrix scalar(double v) { return Matrix(1, 1, {v}); }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// out = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.rows());
  Matrix out(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* orow = out.data() + static_cast<size_t>(i) * m;
    const double* arow = a.data() + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + static_cast<size_t>(p) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// out += a^T * b  (used by backward passes)
inline void add_At_B(Matrix& out, const Matrix& a, const Matrix& b) {
  assert(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int p = 0; p < n; ++p) {
    const double* arow = a.data() + static_cast<size_t>(p) * k;
    const double* brow = b.data() + static_cast<size_t>(p) * m;
    for (int i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.data() + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out += a * b^T
inline void add_A_Bt(Matrix& out, const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows());
  const int n = a.rows(), k = a.cols(), m = b.rows();
  for (int i = 0; i < n; ++i) {
    const double* arow = a.data() + static_cast<size_t>(i) * k;
    double* orow = out.data() + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = b.data() + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] += s;
    }
  }
}

}  // namespace flowbridge
