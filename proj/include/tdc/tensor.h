// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef TDC_TENSOR_H_
#define TDC_TENSOR_H_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tdc {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. Sequences are stored as rank-2 tensors
// with frames along the first axis and channels along the second.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  // Column vector (length x 1) holding the given values.
  static Tensor column(std::span<const double> values);
  static Tensor from_rows(
      std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  // Rank-2 view helpers: rows() is the leading extent, cols() the product of
  // the remaining extents.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<double> row(std::size_t r) {
    const std::size_t c = cols();
    return {data_.data() + r * c, c};
  }
  std::span<const double> row(std::size_t r) const {
    const std::size_t c = cols();
    return {data_.data() + r * c, c};
  }

  // Same storage, new shape; element count must match.
  Tensor reshaped(Shape shape) const;

  void fill(double value);
  void set_zero() { fill(0.0); }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale);

  bool all_finite() const;
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double scale);

double dot(const Tensor& a, const Tensor& b);
double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double max_abs(const Tensor& a);

// Throws DimensionError unless the shapes are identical.
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);
void require_rank(const Tensor& a, std::size_t rank, const char* context);

}  // namespace tdc

#endif  // TDC_TENSOR_H_
