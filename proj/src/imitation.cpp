#include "fine_imitate/imitation.hpp"

#include <cmath>
#include <stdexcept>

namespace fi::imitation {

AdaptationLayer make_adaptation_layer(std::size_t student_channels, std::size_t teacher_channels,
                                      std::uint64_t seed, AdaptInit init) {
  AdaptationLayer layer{numerics::make_conv_params(3, student_channels, teacher_channels, seed)};
  if (init == AdaptInit::zero) {
    for (double& v : layer.params.kernels.values()) v = 0.0;
  }
  return layer;
}

std::string to_string(AdaptInit init) { return init == AdaptInit::he ? "he" : "zero"; }

AdaptInit adapt_init_from_string(const std::string& s) {
  if (s == "he") return AdaptInit::he;
  if (s == "zero") return AdaptInit::zero;
  throw std::invalid_argument("unknown adaptation init '" + s + "' (expected he or zero)");
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::adaptive:
      return "adaptive";
    case MaskMode::gt_projection:
      return "gt_projection";
  }
  return "unknown";
}

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "adaptive") return MaskMode::adaptive;
  if (s == "gt_projection") return MaskMode::gt_projection;
  throw std::invalid_argument("unknown mask mode '" + s + "' (expected adaptive or gt_projection)");
}

void validate(const DistillConfig& cfg) {
  if (!std::isfinite(cfg.lambda) || cfg.lambda < 0.0) {
    throw std::invalid_argument("distill: lambda must be finite and >= 0, got " + std::to_string(cfg.lambda));
  }
  mask::validate(mask::MaskConfig{cfg.psi});
}

Tensor adapt(const Tensor& student_feat, const AdaptationLayer& layer) {
  if (student_feat.rank() != 3 || student_feat.dim(2) != layer.student_channels()) {
    throw numerics::ShapeError("adapt: student feature " + student_feat.shape_string() +
                               " does not match adaptation kernels " + layer.params.kernels.shape_string());
  }
  return numerics::conv_forward(student_feat, layer.params, 1);
}

numerics::ConvGrads adapt_backward(const Tensor& student_feat, const AdaptationLayer& layer,
                                   const Tensor& grad_adapted) {
  return numerics::conv_backward(student_feat, layer.params, 1, grad_adapted);
}

ImitationLoss imitation_loss(const Tensor& adapted, const Tensor& teacher, const mask::ImitationMask& mask) {
  numerics::require_same_shape(adapted, teacher, "imitation_loss");
  if (adapted.rank() != 3 || mask.width() != adapted.dim(0) || mask.height() != adapted.dim(1)) {
    throw numerics::ShapeError("imitation_loss: mask " + std::to_string(mask.width()) + "x" +
                               std::to_string(mask.height()) + " does not match feature " + adapted.shape_string());
  }
  ImitationLoss out{0.0, Tensor(adapted.dims())};
  if (mask.n_positive() == 0) return out;

  const std::size_t w = adapted.dim(0), h = adapted.dim(1), c = adapted.dim(2);
  const double inv_np = 1.0 / static_cast<double>(mask.n_positive());
  double sum = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      if (!mask.at(i, j)) continue;
      const std::size_t base = (i * h + j) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double r = adapted[base + ch] - teacher[base + ch];
        sum += r * r;
        out.grad_adapted[base + ch] = r * inv_np;
      }
    }
  }
  out.loss = 0.5 * sum * inv_np;
  return out;
}

LossBreakdown total_loss(double l_gt, double l_imitation, const DistillConfig& cfg) {
  if (!std::isfinite(l_gt) || !std::isfinite(l_imitation) || !std::isfinite(cfg.lambda)) {
    throw numerics::NonFiniteError("total_loss: non-finite input");
  }
  return {l_gt, l_imitation, l_gt + cfg.lambda * l_imitation};
}

}  // namespace fi::imitation
