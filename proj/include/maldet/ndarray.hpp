#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "maldet/rng.hpp"

namespace maldet::nd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every dimension is positive and `size() == product(shape())`. Values are
/// expected to stay finite; `check_finite()` raises NumericError otherwise.
class NumArray {
 public:
  NumArray() = default;
  explicit NumArray(Shape shape, double fill = 0.0);
  NumArray(Shape shape, std::vector<double> data);

  static NumArray zeros(Shape shape) { return NumArray(std::move(shape), 0.0); }
  static NumArray full(Shape shape, double value) { return NumArray(std::move(shape), value); }
  static NumArray scalar(double value) { return NumArray(Shape{1}, value); }
  /// 1-D array from a list of values.
  static NumArray vector(std::initializer_list<double> values);
  /// 2-D array from nested rows; all rows must have equal length.
  static NumArray matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// 2-D element access (rank must be 2).
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  /// Same data under a new shape with equal element count.
  NumArray reshaped(Shape shape) const;

  /// Throws NumericError when any value is NaN or infinite.
  void check_finite(const char* context) const;

  bool operator==(const NumArray& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// i.i.d. uniform values in (-limit, +limit).
NumArray init_uniform(const Shape& shape, double limit, Rng& rng);

/// C = A * B for A (m x k), B (k x n); accumulates into `out` when `accumulate` is set.
void matmul_into(std::span<const double> a, std::span<const double> b, std::span<double> out,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate);
/// out += A^T * B for A (k x m), B (k x n).
void matmul_at_b_acc(std::span<const double> a, std::span<const double> b, std::span<double> out,
                     std::size_t k, std::size_t m, std::size_t n);
/// out += A * B^T for A (m x k), B (n x k).
void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n);

}  // namespace maldet::nd
