#include "vfm/tensor.hpp"

#include <cmath>
#include <string>

#include "vfm/error.hpp"

namespace vfm {

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
  Tensor t;
  if (element_count(shape) != values.size()) {
    throw Error(Errc::ShapeMismatch, "value count " + std::to_string(values.size()) +
                                         " does not fill shape " + shape_string(shape));
  }
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

void Tensor::reshape(std::vector<std::size_t> shape) {
  if (element_count(shape) != data_.size()) {
    throw Error(Errc::ShapeMismatch,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.data_.size() != data_.size()) {
    throw Error(Errc::ShapeMismatch, shape_string(shape_) + " += " + shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) noexcept {
  for (double& v : data_) v *= s;
  return *this;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace vfm
