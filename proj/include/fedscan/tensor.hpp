#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedscan/errors.hpp"
#include "fedscan/rng.hpp"

namespace fedscan {

using Shape = std::vector<int>;

std::size_t checked_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense n-dimensional array of doubles, row-major. The length of the flat
/// buffer always equals the product of the shape dims.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  int dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Returns a copy with the given shape; element count must match.
  Tensor reshaped(Shape shape) const;

 private:
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace fedscan
