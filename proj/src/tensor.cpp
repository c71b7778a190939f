#include "fine_imitate/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace fi::numerics {

namespace {

std::size_t element_count(const std::vector<std::size_t>& dims) {
  if (dims.empty()) return 0;
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : dims_(std::move(dims)), values_(element_count(dims_), fill) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  if (element_count(dims_) != values_.size()) {
    throw ShapeError("tensor dims " + numerics::shape_string(dims_) + " hold " +
                     std::to_string(element_count(dims_)) + " values, got " +
                     std::to_string(values_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= dims_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string());
  }
  return dims_[axis];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return numerics::shape_string(dims_); }

std::string shape_string(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw ShapeError(what + ": shape " + a.shape_string() + " does not match " + b.shape_string());
  }
}

void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NonFiniteError(what + ": non-finite value in tensor " + t.shape_string());
}

}  // namespace fi::numerics
