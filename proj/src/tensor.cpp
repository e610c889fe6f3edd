#include "dav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "dav/error.hpp"

namespace dav {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "{";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "}";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DataError("tensor shape has a zero dimension: " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DataError("tensor data length " + std::to_string(data_.size()) +
                    " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DataError("reshape to " + shape_str(shape) + " does not preserve element count of " +
                    shape_str(shape_));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double l1_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.vec()) s += std::abs(v);
  return s;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.vec()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DataError("max_abs_diff shape mismatch: " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double min_value(const Tensor& t) {
  double m = t[0];
  for (double v : t.vec()) m = std::min(m, v);
  return m;
}

double max_value(const Tensor& t) {
  double m = t[0];
  for (double v : t.vec()) m = std::max(m, v);
  return m;
}

}  // namespace dav
