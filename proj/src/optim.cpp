#include "fine_imitate/optim.hpp"

namespace fi::numerics {

namespace {

void check_hyper(double lr, double momentum) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd: learning rate must be > 0, got " + std::to_string(lr));
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("sgd: momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
}

}  // namespace

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum) {
  check_hyper(lr, momentum);
  require_same_shape(param, grad, "sgd_step grad");
  require_same_shape(param, velocity, "sgd_step velocity");
  require_finite(grad, "sgd_step grad");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    param[i] -= lr * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  check_hyper(lr, momentum);
}

void SgdOptimizer::set_learning_rate(double lr) {
  check_hyper(lr, momentum_);
  lr_ = lr;
}

void SgdOptimizer::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd: " + std::to_string(params.size()) + " params but " + std::to_string(grads.size()) +
                     " grads");
  }
  if (velocity_.empty()) {
    for (const Tensor* p : params) velocity_.emplace_back(p->dims());
  } else if (velocity_.size() != params.size()) {
    throw ShapeError("sgd: parameter list changed size between steps");
  }
  // Validate everything first so a bad gradient leaves all parameters untouched.
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], *grads[i], "sgd grad " + std::to_string(i));
    require_finite(*grads[i], "sgd grad " + std::to_string(i));
  }
  for (std::size_t i = 0; i < params.size(); ++i) sgd_step(*params[i], *grads[i], velocity_[i], lr_, momentum_);
}

}  // namespace fi::numerics
