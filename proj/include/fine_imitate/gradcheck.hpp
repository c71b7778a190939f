#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fine_imitate/tensor.hpp"

namespace fi::numerics {

struct GradientReport {
  double max_rel_error = 0.0;
  std::size_t worst_param_index = 0;  // which tensor in the parameter list
  std::size_t worst_value_index = 0;  // flat offset inside that tensor
  double eps = 0.0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t min_samples = 200;
  std::uint64_t seed = 7;
  // Entries where both |analytic| and |numeric| fall below this are compared
  // on an absolute scale.
  double abs_floor = 1e-7;
};

/// Compares analytic gradients against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) on a random subsample of entries
/// (all entries when there are fewer than `min_samples`).
///
/// `loss` is re-evaluated with `params` perturbed in place; every entry is
/// restored bit-exactly afterwards. `analytic` holds one gradient tensor per
/// parameter, computed at the unperturbed point.
GradientReport grad_check(std::span<Tensor* const> params, const std::function<double()>& loss,
                          std::span<const Tensor> analytic, const GradCheckOptions& options = {});

}  // namespace fi::numerics
