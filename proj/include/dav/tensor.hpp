#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dav {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense n-dimensional array of 64-bit reals, row-major. The one value
// carrier for images, depth maps, masks, gradients and parameters.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-2 {H,W}
  double& at(std::size_t y, std::size_t x) { return data_[y * shape_[1] + x]; }
  double at(std::size_t y, std::size_t x) const { return data_[y * shape_[1] + x]; }
  // rank-3 {C,H,W}
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Keeps the data, reinterprets the shape; element counts must match.
  Tensor reshaped(Shape shape) const;

  void fill(double v);

 private:
  Shape shape_;
  std::vector<double> data_;
};

// All reductions below run in flat index order so results are reproducible.
double l1_norm(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double min_value(const Tensor& t);
double max_value(const Tensor& t);

}  // namespace dav
