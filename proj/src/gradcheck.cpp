#include "fine_imitate/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fi::numerics {

GradientReport grad_check(std::span<Tensor* const> params, const std::function<double()>& loss,
                          std::span<const Tensor> analytic, const GradCheckOptions& options) {
  if (!(options.eps >= 1e-6 && options.eps <= 1e-2)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-2], got " + std::to_string(options.eps));
  }
  if (params.size() != analytic.size()) throw ShapeError("grad_check: params and gradients differ in count");
  for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*params[i], analytic[i], "grad_check");

  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t v = 0; v < params[p]->size(); ++v) entries.emplace_back(p, v);
  }
  if (entries.size() > options.min_samples) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(options.min_samples);
    std::sort(entries.begin(), entries.end());
  }

  GradientReport report;
  report.eps = options.eps;
  for (const auto& [p, v] : entries) {
    double& slot = (*params[p])[v];
    const double original = slot;
    slot = original + options.eps;
    const double up = loss();
    slot = original - options.eps;
    const double down = loss();
    slot = original;

    const double numeric = (up - down) / (2.0 * options.eps);
    const double a = analytic[p][v];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    const double err = std::abs(a - numeric) / denom;
    ++report.checked;
    if (err > report.max_rel_error || !std::isfinite(err)) {
      report.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      report.worst_param_index = p;
      report.worst_value_index = v;
    }
  }
  return report;
}

}  // namespace fi::numerics
