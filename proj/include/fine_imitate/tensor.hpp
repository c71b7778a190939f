#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fi::numerics {

/// Raised when operand shapes do not agree. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a value that must be finite is NaN or infinite.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles.
///
/// The last dimension varies fastest. Feature maps use dims {W, H, C}, so
/// element (x, y, c) lives at ((x * H) + y) * C + c. Convolution kernels use
/// dims {kh, kw, Cin, Cout}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> values);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Rank-3 accessors; callers are expected to stay in range.
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return values_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return values_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> values_;
};

std::string shape_string(const std::vector<std::size_t>& dims);

/// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

/// Throws NonFiniteError when any entry is NaN or infinite.
void require_finite(const Tensor& t, const std::string& what);

}  // namespace fi::numerics
