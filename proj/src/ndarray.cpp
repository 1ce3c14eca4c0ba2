#include "maldet/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "maldet/error.hpp"

namespace maldet::nd {

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw Error(ErrorKind::ShapeMismatch, "array rank must be at least 1");
  for (auto d : shape) {
    if (d == 0) throw Error(ErrorKind::ShapeMismatch, "zero-length dimension in " + shape_string(shape));
  }
}

}  // namespace

NumArray::NumArray(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

NumArray::NumArray(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "shape " + shape_string(shape_) + " does not hold " +
                                              std::to_string(data_.size()) + " values");
  }
}

NumArray NumArray::vector(std::initializer_list<double> values) {
  return NumArray(Shape{values.size()}, std::vector<double>(values));
}

NumArray NumArray::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw Error(ErrorKind::ShapeMismatch, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return NumArray(Shape{rows.size(), cols}, std::move(data));
}

NumArray NumArray::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw Error(ErrorKind::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return NumArray(std::move(shape), data_);
}

void NumArray::check_finite(const char* context) const {
  for (double v : data_) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NumericError, std::string("non-finite value in ") + context);
  }
}

NumArray init_uniform(const Shape& shape, double limit, Rng& rng) {
  if (!(limit > 0.0)) throw Error(ErrorKind::InvalidConfig, "init_uniform limit must be positive");
  NumArray out(shape);
  for (auto& v : out.data()) v = rng.symmetric(limit);
  return out;
}

void matmul_into(std::span<const double> a, std::span<const double> b, std::span<double> out,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> b, std::span<double> out,
                     std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a.data() + p * m;
    const double* brow = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* row = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      out[i * n + j] += s;
    }
  }
}

}  // namespace maldet::nd
