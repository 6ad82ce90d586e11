#include "fedscan/tensor.hpp"

#include <cmath>

namespace fedscan {

std::size_t checked_numel(const Shape& shape) {
  if (shape.empty()) {
    throw ShapeError("shape must have at least one dimension");
  }
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 1) {
      throw ShapeError("invalid dimension " + std::to_string(d) + " in shape " +
                       shape_str(shape));
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = checked_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = checked_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  const std::size_t n = checked_numel(shape);
  std::vector<double> data(n);
  for (double& x : data) {
    x = rng.uniform(lo, hi);
  }
  return Tensor(std::move(shape), std::move(data));
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (checked_numel(shape) != size()) {
    throw ShapeError("reshape from " + shape_str(shape_) + " to " +
                     shape_str(shape) + " changes element count");
  }
  return Tensor(std::move(shape), data_);
}

}  // namespace fedscan
