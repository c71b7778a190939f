#pragma once

#include <span>
#include <vector>

#include "fine_imitate/tensor.hpp"

namespace fi::numerics {

/// One momentum-SGD update of a single tensor:
///   v <- momentum * v + grad;  p <- p - lr * v
/// Throws NonFiniteError (before touching anything) if `grad` has NaN/Inf.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum);

/// Momentum SGD over an ordered list of tensors. Velocity buffers are keyed by
/// position, so callers must pass the same tensors in the same order each step.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum);

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

}  // namespace fi::numerics
