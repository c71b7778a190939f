#pragma once

#include <cstdint>
#include <string>

#include "fine_imitate/layers.hpp"
#include "fine_imitate/mask.hpp"

namespace fi::imitation {

using numerics::Tensor;

/// 3x3 stride-1 same-padded convolution that maps the student's guided
/// feature (C_student channels) onto the teacher's channel count. Trained with
/// the student, dropped at deployment.
struct AdaptationLayer {
  numerics::LayerParams params;

  std::size_t student_channels() const { return params.in_channels(); }
  std::size_t teacher_channels() const { return params.out_channels(); }
};

/// Initial adaptation kernels: He-normal, or all zeros. Biases start at zero
/// either way. With zero kernels the backbone receives no imitation gradient
/// until the adaptation layer has picked up some correlation with the teacher.
enum class AdaptInit { he, zero };

std::string to_string(AdaptInit init);
AdaptInit adapt_init_from_string(const std::string& s);

AdaptationLayer make_adaptation_layer(std::size_t student_channels, std::size_t teacher_channels,
                                      std::uint64_t seed, AdaptInit init = AdaptInit::he);

/// Which imitation region the distillation loss uses.
enum class MaskMode {
  adaptive,       // IOU-derived near-object mask with factor psi (psi = 0 is full-feature)
  gt_projection,  // gt boxes scaled onto the feature lattice
};

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& s);

struct DistillConfig {
  double lambda = 1.0;
  double psi = 0.5;
  MaskMode mask_mode = MaskMode::adaptive;
  AdaptInit adapt_init = AdaptInit::zero;
  friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

void validate(const DistillConfig& cfg);

struct LossBreakdown {
  double l_gt = 0.0;
  double l_imitation = 0.0;
  double l_total = 0.0;
};

Tensor adapt(const Tensor& student_feat, const AdaptationLayer& layer);

numerics::ConvGrads adapt_backward(const Tensor& student_feat, const AdaptationLayer& layer,
                                   const Tensor& grad_adapted);

struct ImitationLoss {
  double loss = 0.0;
  Tensor grad_adapted;
};

/// Masked squared distance normalised by the positive count:
///   L = 1 / (2 Np) * sum_ij I_ij sum_c (adapted_ijc - teacher_ijc)^2
/// The teacher is a constant. Np == 0 gives loss 0 and a zero gradient.
ImitationLoss imitation_loss(const Tensor& adapted, const Tensor& teacher, const mask::ImitationMask& mask);

/// L = L_gt + lambda * L_imitation.
LossBreakdown total_loss(double l_gt, double l_imitation, const DistillConfig& cfg);

}  // namespace fi::imitation
